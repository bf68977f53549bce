//! Coalition-wise inference: conjugate posteriors, joint MLE, the normal
//! (BvM) approximation, characteristic values and their large-sample asymptotes.

use std::f64::consts::{E, PI};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fisher::{joint_fisher, log_det_fisher, FisherMatrix};
use crate::game::{CharacteristicFunction, Coalition, MAX_PLAYERS};
use crate::gauss::{extended_kl_gauss_box, kl_gauss, BoxUniform, Gaussian, McEstimate};
use crate::linalg::{psd_rank, Cholesky};
use crate::models::{analytic_fisher, estimate_noise_sd, information_terms, DataSet, PlayerModel};
use crate::rng::derive_seed;

/// The commonly agreed prior.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    Normal(Gaussian),
    BoxUniform(BoxUniform),
}

impl Prior {
    pub fn dim(&self) -> usize {
        match self {
            Prior::Normal(g) => g.dim(),
            Prior::BoxUniform(b) => b.dim(),
        }
    }
}

/// One player's model and data as seen by a coalition, plus the plug-in
/// noise estimate for unknown-noise models.
#[derive(Debug, Clone, Copy)]
pub struct PlayerData<'a> {
    pub model: &'a PlayerModel,
    pub data: &'a DataSet,
    pub noise_sd_hat: Option<f64>,
}

impl<'a> PlayerData<'a> {
    pub fn new(model: &'a PlayerModel, data: &'a DataSet) -> Self {
        Self { model, data, noise_sd_hat: None }
    }

    pub fn with_noise(model: &'a PlayerModel, data: &'a DataSet, noise_sd_hat: Option<f64>) -> Self {
        Self { model, data, noise_sd_hat }
    }
}

/// Summed likelihood information `(Σ AᵀR⁻¹A, Σ AᵀR⁻¹y)` over all members' data.
pub fn likelihood_information(k: usize, members: &[PlayerData<'_>]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut gram = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for p in members {
        if p.model.dim() != k {
            return Err(Error::DimensionMismatch { expected: k, found: p.model.dim() });
        }
        for datum in &p.data.points {
            let (g, b) = information_terms(p.model, datum, p.noise_sd_hat)?;
            gram += g;
            rhs += b;
        }
    }
    Ok((gram, rhs))
}

/// Exact Gaussian posterior of a normal prior updated with Gaussian-linear data.
pub fn conjugate_posterior(prior: &Gaussian, members: &[PlayerData<'_>]) -> Result<Gaussian> {
    let k = prior.dim();
    if members.iter().all(|p| p.data.is_empty()) {
        if let Some(p) = members.iter().find(|p| p.model.dim() != k) {
            return Err(Error::DimensionMismatch { expected: k, found: p.model.dim() });
        }
        return Ok(prior.clone());
    }
    let (gram, rhs) = likelihood_information(k, members)?;
    let prior_precision = prior.precision();
    let precision = &prior_precision + gram;
    let h = &prior_precision * prior.mean() + rhs;
    let chol = Cholesky::new(&precision)?;
    Gaussian::new(chol.solve_vec(&h), chol.inverse())
}

/// Precision matrix of the conjugate posterior.
pub fn posterior_precision(prior: &Gaussian, members: &[PlayerData<'_>]) -> Result<DMatrix<f64>> {
    let (gram, _) = likelihood_information(prior.dim(), members)?;
    Ok(prior.precision() + gram)
}

/// Weighted least-squares maximiser of the joint likelihood.
pub fn joint_mle(k: usize, members: &[PlayerData<'_>]) -> Result<DVector<f64>> {
    let (gram, rhs) = likelihood_information(k, members)?;
    match Cholesky::new(&gram) {
        Ok(chol) => Ok(chol.solve_vec(&rhs)),
        Err(_) => Err(Error::RankDeficient { rank: psd_rank(&gram), dim: k }),
    }
}

/// Ordinary least squares on one linear player's own data, ignoring its noise level.
pub fn own_least_squares(model: &PlayerModel, data: &DataSet) -> Result<DVector<f64>> {
    let unit = Some(1.0);
    joint_mle(model.dim(), &[PlayerData::with_noise(model, data, unit)])
}

/// Plug-in noise estimate for an unknown-noise player; `None` for players
/// that do not need one. Residuals are taken at `theta_bar`, or at the
/// player's own least-squares fit when no joint estimate is available yet.
pub fn plug_in_noise_sd(model: &PlayerModel, data: &DataSet, theta_bar: Option<&DVector<f64>>) -> Result<Option<f64>> {
    if !model.needs_noise_estimate() {
        return Ok(None);
    }
    let centre = match theta_bar {
        Some(t) => t.clone(),
        None => own_least_squares(model, data)?,
    };
    Ok(Some(estimate_noise_sd(model, data, &centre)?.sd))
}

/// `N(θ̂, (m · I)⁻¹)`.
pub fn bvm_approx(theta_hat: &DVector<f64>, fisher: &FisherMatrix, m: usize) -> Result<Gaussian> {
    if m == 0 {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    if theta_hat.len() != fisher.dim() {
        return Err(Error::DimensionMismatch { expected: fisher.dim(), found: theta_hat.len() });
    }
    let chol = Cholesky::new(&(fisher.matrix() * m as f64))?;
    Gaussian::new(theta_hat.clone(), chol.inverse())
}

/// Coalition Fisher information rescaled to the smallest nonzero member count:
/// returns `(Σ_i (m_i/m) I_i, m)` so that `m · I_S = Σ_i m_i I_i`.
///
/// Returns `None` when no member holds any data.
pub fn coalition_fisher(members: &[PlayerData<'_>]) -> Result<Option<(FisherMatrix, usize)>> {
    let Some(m) = members.iter().map(|p| p.data.len()).filter(|&c| c > 0).min() else {
        return Ok(None);
    };
    let parts = members
        .iter()
        .filter(|p| !p.data.is_empty())
        .map(|p| Ok((analytic_fisher(p.model, p.noise_sd_hat)?, p.data.len() as f64 / m as f64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some((joint_fisher(&parts)?, m)))
}

/// Everything inference knows about one coalition.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub exact: Gaussian,
    /// `None` when the coalition's design is rank deficient.
    pub mle: Option<DVector<f64>>,
    pub joint_fisher: Option<FisherMatrix>,
    pub counts: Vec<usize>,
}

pub fn summarize(prior: &Gaussian, members: &[PlayerData<'_>]) -> Result<PosteriorSummary> {
    let exact = conjugate_posterior(prior, members)?;
    let mle = match joint_mle(prior.dim(), members) {
        Ok(m) => Some(m),
        Err(Error::RankDeficient { .. }) => None,
        Err(e) => return Err(e),
    };
    let joint_fisher = coalition_fisher(members)?.map(|(f, _)| f);
    Ok(PosteriorSummary { exact, mle, joint_fisher, counts: members.iter().map(|p| p.data.len()).collect() })
}

/// Monte-Carlo settings for box-prior valuations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueOptions {
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for ValueOptions {
    fn default() -> Self {
        Self { mc_samples: 20_000, seed: 0 }
    }
}

/// `KL(P_S ‖ Π)` for the coalition formed by `members`.
///
/// Under a normal prior this is the exact conjugate divergence (zero
/// standard error). Under a box-uniform prior it is the extended divergence
/// of the normal approximation `N(θ̂_S, (Σ m_i I_i)⁻¹)`, estimated by Monte Carlo.
pub fn characteristic_value(members: &[PlayerData<'_>], prior: &Prior, opts: &ValueOptions) -> Result<McEstimate> {
    let zero = McEstimate { estimate: 0.0, std_error: 0.0 };
    if members.is_empty() {
        return Ok(zero);
    }
    match prior {
        Prior::Normal(g) => {
            let post = conjugate_posterior(g, members)?;
            Ok(McEstimate { estimate: kl_gauss(&post, g)?, std_error: 0.0 })
        }
        Prior::BoxUniform(b) => {
            let Some((fisher, m)) = coalition_fisher(members)? else {
                return Ok(zero);
            };
            let theta_hat = joint_mle(b.dim(), members)?;
            let approx = bvm_approx(&theta_hat, &fisher, m)?;
            extended_kl_gauss_box(&approx, b, opts.mc_samples, opts.seed)
        }
    }
}

/// Evaluates the characteristic function on all `2^n` coalitions.
///
/// Each coalition draws its Monte-Carlo stream from `(seed, bitmask)`, so the
/// result does not depend on scheduling.
pub fn build_game(players: &[PlayerData<'_>], prior: &Prior, opts: &ValueOptions) -> Result<CharacteristicFunction> {
    let n = players.len();
    if n == 0 || n > MAX_PLAYERS {
        return Err(Error::InvalidGameSize { len: n, max: MAX_PLAYERS });
    }
    let evaluated: Vec<McEstimate> = (0..1u32 << n)
        .into_par_iter()
        .map(|mask| {
            let s = Coalition(mask);
            let members: Vec<PlayerData<'_>> = s.members().map(|i| players[i]).collect();
            let opts = ValueOptions { seed: derive_seed(opts.seed, &[mask as u64]), ..*opts };
            characteristic_value(&members, prior, &opts)
        })
        .collect::<Result<_>>()?;
    let values = evaluated.iter().map(|e| e.estimate).collect();
    let game = CharacteristicFunction::new(n, values)?;
    match prior {
        Prior::Normal(_) => Ok(game),
        Prior::BoxUniform(_) => game.with_std_errors(evaluated.iter().map(|e| e.std_error).collect()),
    }
}

/// `(k/2) ln(m / 2πe) + ln λ(Θ_U) + ½ ln|I_S|`.
pub fn uniform_prior_asymptote(m: f64, k: usize, support: &BoxUniform, fisher: &FisherMatrix) -> Result<f64> {
    Ok(0.5 * k as f64 * (m / (2.0 * PI * E)).ln() + support.log_volume() + 0.5 * log_det_fisher(fisher)?)
}

/// `½ k ln m + ξ + ½ ln|I_S|`.
pub fn normal_prior_asymptote(m: f64, k: usize, xi: f64, fisher: &FisherMatrix) -> Result<f64> {
    Ok(0.5 * k as f64 * m.ln() + xi + 0.5 * log_det_fisher(fisher)?)
}

/// `ξ = ½ (‖θ₀ − θ*‖²_{Σ₀⁻¹} − k + ln|Σ₀|)`.
pub fn xi(prior_mean: &DVector<f64>, prior_cov: &DMatrix<f64>, theta_star: &DVector<f64>) -> Result<f64> {
    let k = prior_mean.len();
    if theta_star.len() != k {
        return Err(Error::DimensionMismatch { expected: k, found: theta_star.len() });
    }
    let chol = Cholesky::new(prior_cov)?;
    Ok(0.5 * (chol.mahalanobis_sq(&(prior_mean - theta_star)) - k as f64 + chol.log_det()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fisher::Provenance;
    use crate::models::{DataPoint, DirectObservationModel, LinearGaussianModel};

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn empty_data_returns_prior() {
        let prior = Gaussian::standard(2);
        let model: PlayerModel = DirectObservationModel::isotropic(2, 1.0).unwrap().into();
        let empty = DataSet::default();
        let post = conjugate_posterior(&prior, &[PlayerData::new(&model, &empty)]).unwrap();
        assert_eq!(post, prior);
        assert_eq!(conjugate_posterior(&prior, &[]).unwrap(), prior);
    }

    #[test]
    fn textbook_conjugate_update() {
        let prior = Gaussian::standard(1);
        let model: PlayerModel = DirectObservationModel::isotropic(1, 1.0).unwrap().into();
        let data = DataSet::new(0, vec![DataPoint::Direct { y: DVector::from_element(1, 2.0) }]);
        let post = conjugate_posterior(&prior, &[PlayerData::new(&model, &data)]).unwrap();
        assert!((post.mean()[0] - 1.0).abs() < 1e-15);
        assert!((post.covariance()[(0, 0)] - 0.5).abs() < 1e-15);

        let v =
            characteristic_value(&[PlayerData::new(&model, &data)], &Prior::Normal(prior), &ValueOptions::default())
                .unwrap();
        assert!((v.estimate - (0.25 + 0.5 * 2f64.ln())).abs() < 1e-12);
        assert!((v.estimate - 0.5966).abs() < 1e-4);
    }

    #[test]
    fn mle_of_direct_player_is_sample_mean() {
        let model: PlayerModel = DirectObservationModel::isotropic(2, 3.0).unwrap().into();
        let ys = [[1.0, 2.0], [3.0, -2.0], [2.0, 3.0]];
        let data = DataSet::new(0, ys.iter().map(|y| DataPoint::Direct { y: DVector::from_row_slice(y) }).collect());
        let mle = joint_mle(2, &[PlayerData::new(&model, &data)]).unwrap();
        assert!((mle - DVector::from_vec(vec![2.0, 1.0])).amax() < 1e-14);
    }

    #[test]
    fn rank_deficient_design_reports_rank() {
        let model: PlayerModel = LinearGaussianModel::standard(2, 1.0, true).unwrap().into();
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let data = DataSet::new(0, (0..5).map(|j| DataPoint::linear_row(e1.clone(), j as f64)).collect());
        assert_eq!(joint_mle(2, &[PlayerData::new(&model, &data)]), Err(Error::RankDeficient { rank: 1, dim: 2 }));
    }

    #[test]
    fn bvm_scaling() {
        let th = DVector::from_vec(vec![0.3, -0.2]);
        let i2 = FisherMatrix::new(DMatrix::identity(2, 2), Provenance::Analytic).unwrap();
        let g = bvm_approx(&th, &i2, 1).unwrap();
        assert_eq!(g.covariance(), &DMatrix::identity(2, 2));
        assert_eq!(g.mean(), &th);
        let f = FisherMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]), Provenance::Analytic).unwrap();
        let c100 = bvm_approx(&th, &f, 100).unwrap().covariance().clone();
        let c400 = bvm_approx(&th, &f, 400).unwrap().covariance().clone();
        assert!((c100 / 4.0 - c400).amax() < 1e-15);
        let singular = FisherMatrix::new(DMatrix::zeros(2, 2), Provenance::Analytic).unwrap();
        assert!(bvm_approx(&th, &singular, 10).is_err());
    }

    #[test]
    fn asymptote_examples() {
        let unit = FisherMatrix::new(scalar(1.0), Provenance::Analytic).unwrap();
        let b = BoxUniform::new(DVector::from_element(1, 0.0), DVector::from_element(1, 1.0)).unwrap();
        let m = 2.0 * PI * E;
        assert!(uniform_prior_asymptote(m, 1, &b, &unit).unwrap().abs() < 1e-15);
        let a1 = uniform_prior_asymptote(100.0, 3, &b, &unit.scaled(2.0).unwrap()).unwrap();
        let a2 = uniform_prior_asymptote(200.0, 3, &b, &unit.scaled(2.0).unwrap()).unwrap();
        assert!((a2 - a1 - 1.5 * 2f64.ln()).abs() < 1e-12);

        let th = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        assert!((xi(&th, &DMatrix::identity(3, 3), &th).unwrap() + 1.5).abs() < 1e-15);
        let x = xi(&DVector::from_element(1, 2.0), &scalar(4.0), &DVector::from_element(1, 0.0)).unwrap();
        assert!((x - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn empty_coalition_value_is_zero() {
        let prior = Prior::Normal(Gaussian::standard(2));
        assert_eq!(characteristic_value(&[], &prior, &ValueOptions::default()).unwrap().estimate, 0.0);
    }

    #[test]
    fn single_player_game() {
        let prior = Prior::Normal(Gaussian::standard(1));
        let model: PlayerModel = DirectObservationModel::isotropic(1, 1.0).unwrap().into();
        let data = DataSet::new(0, vec![DataPoint::Direct { y: DVector::from_element(1, 2.0) }]);
        let v = build_game(&[PlayerData::new(&model, &data)], &prior, &ValueOptions::default()).unwrap();
        assert_eq!(v.n(), 1);
        assert_eq!(v.values()[0], 0.0);
        assert!((v.values()[1] - (0.25 + 0.5 * 2f64.ln())).abs() < 1e-12);
    }
}
