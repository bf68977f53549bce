//! Online fair data sharing: players contribute data at rates set from their
//! estimated Fisher information so that their Shapley values converge.
//!
//! Each iteration estimates the parameter from all data collected so far,
//! estimates every player's Fisher information at that estimate, turns the
//! determinants into per-player collection counts, collects, and finally
//! values the full game to record Shapley values and the δ diagnostics.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fisher::{log_det_fisher, sample_fisher, FisherMatrix};
use crate::game::{shapley_exact, Attribution};
use crate::inference::{build_game, conjugate_posterior, joint_mle, plug_in_noise_sd, PlayerData, Prior, ValueOptions};
use crate::models::{analytic_fisher, DataSet};
use crate::rng::derive_seed;
use crate::sources::{DataSource, SourceError};

/// Per-iteration collection limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateLimits {
    /// Count collected by the player with the largest Fisher determinant.
    pub base_rate: usize,
    pub min_rate: usize,
    pub max_rate: usize,
}

/// Which Fisher matrices drive the rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FisherMode {
    /// Score outer products at the current estimate.
    #[default]
    Sampled,
    /// Expected information of each model, bypassing estimation noise.
    Analytic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairShareConfig {
    pub prior: Prior,
    pub initial_counts: Vec<usize>,
    pub rates: RateLimits,
    pub iterations: usize,
    pub burn_in: usize,
    pub delta_threshold: f64,
    pub window: usize,
    pub seed: u64,
    pub fisher_mode: FisherMode,
    /// Monte-Carlo samples per coalition under a box prior.
    pub mc_samples: usize,
}

impl FairShareConfig {
    pub fn new(prior: Prior, initial_counts: Vec<usize>, rates: RateLimits, iterations: usize, seed: u64) -> Self {
        Self {
            prior,
            initial_counts,
            rates,
            iterations,
            burn_in: 5,
            delta_threshold: 0.1,
            window: 5,
            seed,
            fisher_mode: FisherMode::Sampled,
            mc_samples: 20_000,
        }
    }

    /// Smallest per-player count for which Fisher estimates are used.
    pub fn warm_up_count(k: usize) -> usize {
        k + 4
    }

    pub fn validate(&self, players: usize) -> Result<()> {
        let k = self.prior.dim();
        let RateLimits { base_rate, min_rate, max_rate } = self.rates;
        if self.initial_counts.len() != players {
            return Err(Error::InvalidConfig(format!(
                "{} initial counts for {players} players",
                self.initial_counts.len()
            )));
        }
        if let Some(c) = self.initial_counts.iter().find(|&&c| c < Self::warm_up_count(k)) {
            return Err(Error::InvalidConfig(format!("initial count {c} is below k + 4 = {}", k + 4)));
        }
        if !(1 <= min_rate && min_rate <= base_rate && base_rate <= max_rate) {
            return Err(Error::InvalidConfig(format!(
                "rates must satisfy 1 <= min ({min_rate}) <= base ({base_rate}) <= max ({max_rate})"
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if players == 0 {
            return Err(Error::InvalidConfig("at least one player is required".into()));
        }
        Ok(())
    }
}

/// Estimator of the parameter from the pooled data (step 1 of each iteration).
pub trait ParameterEstimator: Sync {
    fn estimate(&self, prior: &Prior, members: &[PlayerData<'_>]) -> Result<DVector<f64>>;
}

/// Joint conjugate posterior mean under a normal prior; joint MLE under a box prior.
#[derive(Debug, Clone, Copy, Default)]
pub struct PosteriorMean;

impl ParameterEstimator for PosteriorMean {
    fn estimate(&self, prior: &Prior, members: &[PlayerData<'_>]) -> Result<DVector<f64>> {
        match prior {
            Prior::Normal(g) => Ok(conjugate_posterior(g, members)?.mean().clone()),
            Prior::BoxUniform(b) => joint_mle(b.dim(), members),
        }
    }
}

/// One iteration's snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub iteration: usize,
    /// Cumulative counts after this iteration's collection.
    pub counts: Vec<usize>,
    pub shapley: Vec<f64>,
    /// δ for every pair `(i, j)`, `i < j`, in [`pairs`] order; `None` when undefined.
    pub deltas: Vec<Option<f64>>,
    /// `ln|Î_i|` used for this iteration's rates; `None` during warm-up.
    pub logdet_fisher: Vec<Option<f64>>,
    pub theta_bar: Vec<f64>,
}

/// Summary statistics of a δ series after burn-in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaStats {
    pub lowest: f64,
    pub average: f64,
    pub stdev: f64,
    /// 1-based post-burn-in iteration at which the threshold window starts,
    /// or `None` when it is never satisfied.
    pub iter: Option<usize>,
}

/// All unordered player pairs `(i, j)` with `i < j`, lexicographically.
pub fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect()
}

fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

fn clamp_rate(x: f64, limits: &RateLimits) -> usize {
    let r = round_half_up(x);
    if r.is_nan() || r < limits.min_rate as f64 {
        limits.min_rate
    } else if r > limits.max_rate as f64 {
        limits.max_rate
    } else {
        r as usize
    }
}

/// Collection counts for the next iteration.
///
/// The player `i*` with the largest `|Î|` (lowest index on ties) collects the
/// base rate. With two players the other one collects whatever brings the
/// cumulative proportion `m₁+r₁ : m₂+r₂` to `|Î₂|^{1/k} : |Î₁|^{1/k}`; with more
/// players each collects `r_base · (|Î_{i*}| / |Î_i|)^{1/k}`. Counts are
/// rounded half-up and clamped to `[min_rate, max_rate]`.
pub fn rate_step(counts: &[usize], fishers: &[FisherMatrix], limits: &RateLimits) -> Result<Vec<usize>> {
    if counts.len() != fishers.len() {
        return Err(Error::DimensionMismatch { expected: counts.len(), found: fishers.len() });
    }
    let Some(k) = fishers.first().map(FisherMatrix::dim) else {
        return Ok(Vec::new());
    };
    let log_dets = fishers
        .iter()
        .enumerate()
        .map(|(i, f)| {
            if f.dim() != k {
                return Err(Error::DimensionMismatch { expected: k, found: f.dim() });
            }
            log_det_fisher(f).map_err(|_| Error::SingularFisher { player: i, iteration: 0, count: counts[i] })
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut star = 0;
    for (i, &ld) in log_dets.iter().enumerate() {
        if ld > log_dets[star] {
            star = i;
        }
    }
    let base = limits.base_rate.clamp(limits.min_rate, limits.max_rate);
    let ratio = |i: usize| ((log_dets[star] - log_dets[i]) / k as f64).exp();
    Ok((0..fishers.len())
        .map(|i| {
            if i == star {
                base
            } else if fishers.len() == 2 {
                let target = ratio(i) * (counts[star] + base) as f64;
                clamp_rate(target - counts[i] as f64, limits)
            } else {
                clamp_rate(base as f64 * ratio(i), limits)
            }
        })
        .collect())
}

/// `δ = |(φ_i − φ_j) / (φ_i + φ_j)|`; `None` when the denominator vanishes.
pub fn delta_stat(phi: &Attribution, i: usize, j: usize) -> Result<Option<f64>> {
    let n = phi.n();
    for idx in [i, j] {
        if idx >= n {
            return Err(Error::InvalidPlayer { index: idx, n });
        }
    }
    let (a, b) = (phi.values[i], phi.values[j]);
    let den = a + b;
    if den == 0.0 || !den.is_finite() {
        return Ok(None);
    }
    Ok(Some(((a - b) / den).abs()))
}

/// Lowest / average / population standard deviation of the defined δ values
/// after `burn_in`, and the first post-burn-in iteration starting `window`
/// consecutive values below `threshold`. Undefined values break a window.
pub fn iter_metric(series: &[Option<f64>], threshold: f64, window: usize, burn_in: usize) -> Result<DeltaStats> {
    let needed = burn_in + window;
    if series.len() < needed || window == 0 {
        return Err(Error::SeriesTooShort { len: series.len(), needed });
    }
    let post = &series[burn_in..];
    let defined: Vec<f64> = post.iter().flatten().copied().collect();
    let (lowest, average, stdev) = if defined.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        let n = defined.len() as f64;
        let mean = defined.iter().sum::<f64>() / n;
        let var = defined.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        (defined.iter().copied().fold(f64::INFINITY, f64::min), mean, var.sqrt())
    };
    let iter =
        post.windows(window).position(|w| w.iter().all(|d| matches!(d, Some(v) if *v < threshold))).map(|t| t + 1);
    Ok(DeltaStats { lowest, average, stdev, iter })
}

/// δ statistics per pair over a completed run.
pub fn run_stats(records: &[RunRecord], config: &FairShareConfig) -> Result<Vec<((usize, usize), DeltaStats)>> {
    let n = records.first().map(|r| r.counts.len()).unwrap_or(0);
    pairs(n)
        .into_iter()
        .enumerate()
        .map(|(p, pair)| {
            let series: Vec<Option<f64>> = records.iter().map(|r| r.deltas[p]).collect();
            Ok((pair, iter_metric(&series, config.delta_threshold, config.window, config.burn_in)?))
        })
        .collect()
}

fn draw_into(
    source: &mut dyn DataSource,
    data: &mut DataSet,
    count: usize,
    player: usize,
    iteration: usize,
) -> Result<()> {
    match source.draw(count) {
        Ok(points) => {
            data.extend(points);
            Ok(())
        }
        Err(SourceError::Exhausted) => Err(Error::SourceExhausted { player, iteration }),
        Err(SourceError::Failed(e)) => Err(e),
    }
}

fn members<'a>(sources: &'a [Box<dyn DataSource>], data: &'a [DataSet], noise: &[Option<f64>]) -> Vec<PlayerData<'a>> {
    sources.iter().zip(data).zip(noise).map(|((s, d), &n)| PlayerData::with_noise(s.model(), d, n)).collect()
}

fn noise_estimates(
    sources: &[Box<dyn DataSource>],
    data: &[DataSet],
    theta: Option<&DVector<f64>>,
) -> Result<Vec<Option<f64>>> {
    sources.iter().zip(data).map(|(s, d)| plug_in_noise_sd(s.model(), d, theta)).collect()
}

/// Runs the framework with the posterior-mean estimator.
pub fn run(config: &FairShareConfig, sources: &mut [Box<dyn DataSource>]) -> Result<Vec<RunRecord>> {
    run_with_estimator(config, sources, &PosteriorMean)
}

pub fn run_with_estimator(
    config: &FairShareConfig,
    sources: &mut [Box<dyn DataSource>],
    estimator: &dyn ParameterEstimator,
) -> Result<Vec<RunRecord>> {
    let n = sources.len();
    config.validate(n)?;
    let k = config.prior.dim();
    if let Some(s) = sources.iter().find(|s| s.model().dim() != k) {
        return Err(Error::DimensionMismatch { expected: k, found: s.model().dim() });
    }

    let mut data: Vec<DataSet> = (0..n).map(|i| DataSet::new(i, Vec::new())).collect();
    for (i, source) in sources.iter_mut().enumerate() {
        draw_into(source.as_mut(), &mut data[i], config.initial_counts[i], i, 0)?;
    }

    let mut theta_prev: Option<DVector<f64>> = None;
    let mut records = Vec::with_capacity(config.iterations);
    for iteration in 1..=config.iterations {
        // Unknown-noise players are re-estimated from their cumulative data at
        // the previous iteration's estimate (their own fit on the first pass).
        let noise = noise_estimates(sources, &data, theta_prev.as_ref())?;
        let theta_bar = estimator.estimate(&config.prior, &members(sources, &data, &noise))?;

        let counts: Vec<usize> = data.iter().map(DataSet::len).collect();
        let warm_up = counts.iter().any(|&c| c < FairShareConfig::warm_up_count(k));
        let (rates, logdet_fisher) = if warm_up {
            (vec![config.rates.base_rate; n], vec![None; n])
        } else {
            let fishers = (0..n)
                .into_par_iter()
                .map(|i| match config.fisher_mode {
                    FisherMode::Sampled => sample_fisher(sources[i].model(), &theta_bar, &data[i], noise[i]),
                    FisherMode::Analytic => analytic_fisher(sources[i].model(), noise[i]),
                })
                .collect::<Result<Vec<_>>>()?;
            let log_dets = fishers
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    log_det_fisher(f).map(Some).map_err(|_| Error::SingularFisher {
                        player: i,
                        iteration,
                        count: counts[i],
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let rates = rate_step(&counts, &fishers, &config.rates).map_err(|e| match e {
                Error::SingularFisher { player, count, .. } => Error::SingularFisher { player, iteration, count },
                other => other,
            })?;
            (rates, log_dets)
        };

        for (i, source) in sources.iter_mut().enumerate() {
            draw_into(source.as_mut(), &mut data[i], rates[i], i, iteration)?;
        }

        let noise = noise_estimates(sources, &data, Some(&theta_bar))?;
        let opts = ValueOptions { mc_samples: config.mc_samples, seed: derive_seed(config.seed, &[iteration as u64]) };
        let game = build_game(&members(sources, &data, &noise), &config.prior, &opts)?;
        let phi = shapley_exact(&game)?;
        let deltas = pairs(n).into_iter().map(|(i, j)| delta_stat(&phi, i, j)).collect::<Result<Vec<_>>>()?;

        records.push(RunRecord {
            iteration,
            counts: data.iter().map(DataSet::len).collect(),
            shapley: phi.values,
            deltas,
            logdet_fisher,
            theta_bar: theta_bar.iter().copied().collect(),
        });
        theta_prev = Some(theta_bar);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fisher::Provenance;
    use crate::game::{Method, SolutionConcept};
    use nalgebra::DMatrix;

    fn fisher(k: usize, scale: f64) -> FisherMatrix {
        FisherMatrix::new(DMatrix::identity(k, k) * scale, Provenance::Analytic).unwrap()
    }

    fn limits(base: usize) -> RateLimits {
        RateLimits { base_rate: base, min_rate: 1, max_rate: 10_000 }
    }

    fn attribution(values: Vec<f64>) -> Attribution {
        Attribution { values, concept: SolutionConcept::Shapley, method: Method::Exact, std_errors: None }
    }

    #[test]
    fn equal_fishers_collect_base_rate() {
        let f = vec![fisher(3, 2.0); 3];
        assert_eq!(rate_step(&[20, 20, 20], &f, &limits(7)).unwrap(), vec![7, 7, 7]);
        let f = vec![fisher(3, 2.0); 2];
        assert_eq!(rate_step(&[20, 20], &f, &limits(7)).unwrap(), vec![7, 7]);
    }

    #[test]
    fn scalar_two_player_ratio() {
        // |Î₁| = 2, |Î₂| = 8: player 1 must hold 4x player 2's data.
        let f = [fisher(1, 2.0), fisher(1, 8.0)];
        assert_eq!(rate_step(&[80, 20], &f, &limits(10)).unwrap(), vec![40, 10]);
        assert_eq!(rate_step(&[5, 5], &f, &limits(10)).unwrap(), vec![55, 10]);
    }

    #[test]
    fn determinant_root_ratio() {
        let f = [fisher(2, 1.0), fisher(2, 4.0)];
        // ratio (16/1)^{1/2} = 4
        assert_eq!(rate_step(&[40, 10], &f, &limits(10)).unwrap(), vec![40, 10]);
        let f3 = [fisher(2, 1.0), fisher(2, 4.0), fisher(2, 4.0)];
        assert_eq!(rate_step(&[10, 10, 10], &f3, &limits(10)).unwrap(), vec![40, 10, 10]);
    }

    #[test]
    fn clamps_apply() {
        let f = [fisher(1, 1.0), fisher(1, 100.0), fisher(1, 100.0)];
        let lim = RateLimits { base_rate: 5, min_rate: 2, max_rate: 50 };
        assert_eq!(rate_step(&[10, 10, 10], &f, &lim).unwrap(), vec![50, 5, 5]);
        // Over-supplied weak player falls back to the minimum.
        let f = [fisher(1, 1.0), fisher(1, 4.0)];
        assert_eq!(rate_step(&[1000, 10], &f, &lim).unwrap(), vec![2, 5]);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let f = [fisher(1, 1.0), fisher(1, 4.0), fisher(1, 4.0)];
        let r = rate_step(&[10, 10, 10], &f, &limits(3)).unwrap();
        assert_eq!(r, vec![12, 3, 3]);
    }

    #[test]
    fn singular_fisher_is_an_error() {
        let f = [fisher(2, 1.0), FisherMatrix::new(DMatrix::zeros(2, 2), Provenance::Analytic).unwrap()];
        assert!(matches!(rate_step(&[10, 10], &f, &limits(3)), Err(Error::SingularFisher { player: 1, .. })));
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta_stat(&attribution(vec![3.0, 3.0]), 0, 1).unwrap(), Some(0.0));
        assert_eq!(delta_stat(&attribution(vec![3.0, 1.0]), 0, 1).unwrap(), Some(0.5));
        assert_eq!(delta_stat(&attribution(vec![1.0, -1.0]), 0, 1).unwrap(), None);
        assert!(delta_stat(&attribution(vec![1.0, -1.0]), 0, 2).is_err());
    }

    #[test]
    fn iter_metric_examples() {
        let zeros = vec![Some(0.0); 12];
        assert_eq!(iter_metric(&zeros, 0.1, 5, 5).unwrap().iter, Some(1));

        let mut dip = vec![Some(0.2); 5];
        dip.extend([0.15, 0.09, 0.08, 0.07, 0.06, 0.2, 0.3].map(Some));
        assert_eq!(iter_metric(&dip, 0.1, 5, 5).unwrap().iter, None);

        let mut series = vec![Some(0.2); 5];
        series.extend([0.15, 0.09, 0.08, 0.07, 0.06, 0.05, 0.04].map(Some));
        let stats = iter_metric(&series, 0.1, 5, 5).unwrap();
        assert_eq!(stats.iter, Some(2));
        assert_eq!(stats.lowest, 0.04);
        assert!(stats.lowest <= stats.average);

        assert!(matches!(iter_metric(&series[..9], 0.1, 5, 5), Err(Error::SeriesTooShort { .. })));
    }

    #[test]
    fn undefined_deltas_are_excluded_and_break_windows() {
        let series = vec![Some(0.0), Some(0.0), None, Some(0.0), Some(0.0), Some(0.0), Some(0.0), Some(0.0)];
        let stats = iter_metric(&series, 0.1, 5, 0).unwrap();
        assert_eq!(stats.iter, Some(4));
        assert_eq!(stats.average, 0.0);
    }

    #[test]
    fn pair_order() {
        assert_eq!(pairs(3), vec![(0, 1), (0, 2), (1, 2)]);
        assert!(pairs(1).is_empty());
    }
}
