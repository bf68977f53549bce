//! Pre-extracted regression feature tables and the preprocessing that turns
//! them into players: mean imputation, leverage-score or uniform subsampling,
//! least-squares bundling, and noisy observers of a table's regression fit.
//!
//! Tables use the CSV contract `x0..x{d-1}, y` with a header row; an empty
//! cell marks a missing value.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{psd_rank, Cholesky};
use crate::models::{DataPoint, DirectObservationModel, PlayerModel};
use crate::rng::{rng_from, Rng};
use crate::sources::{Budget, DataSource, SourceError};

/// Attempts at drawing a full-rank bundle before giving up.
pub const BUNDLE_RETRIES: usize = 10;

/// Rows of features plus a target column, with a missing-value mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    /// `n × (d + 1)`: features then target. Missing cells hold 0.
    values: DMatrix<f64>,
    missing: DMatrix<bool>,
}

impl FeatureTable {
    /// A fully observed table.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.nrows(), found: y.len() });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "feature table" });
        }
        let cols = x.ncols();
        let mut values = x.insert_column(cols, 0.0);
        values.set_column(values.ncols() - 1, &y);
        let missing = DMatrix::from_element(values.nrows(), values.ncols(), false);
        Ok(Self { values, missing })
    }

    /// A table whose `true` mask entries are missing; their given values are ignored.
    pub fn with_missing(x: DMatrix<f64>, y: DVector<f64>, missing: DMatrix<bool>) -> Result<Self> {
        let mut t =
            Self::new(x.map(|v| if v.is_finite() { v } else { 0.0 }), y.map(|v| if v.is_finite() { v } else { 0.0 }))?;
        if missing.shape() != t.values.shape() {
            return Err(Error::Table(format!(
                "mask shape {:?} does not match table {:?}",
                missing.shape(),
                t.values.shape()
            )));
        }
        t.missing = missing;
        for (v, &m) in t.values.iter_mut().zip(t.missing.iter()) {
            if m {
                *v = 0.0;
            }
        }
        Ok(t)
    }

    /// `y = Xβ + σε` with standard normal features scaled per row by a
    /// log-normal factor, so leverage scores are far from uniform.
    pub fn synthetic(rows: usize, beta: &DVector<f64>, noise_sd: f64, seed: u64) -> Result<Self> {
        if !(noise_sd >= 0.0) {
            return Err(Error::InvalidConfig(format!("noise sd must be non-negative, got {noise_sd}")));
        }
        let mut rng = rng_from(seed, &[0x5441424c]);
        let d = beta.len();
        let mut x = DMatrix::zeros(rows, d);
        for r in 0..rows {
            let scale = (0.5 * rng.sample::<f64, _>(StandardNormal)).exp();
            for c in 0..d {
                x[(r, c)] = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let noise = DVector::from_fn(rows, |_, _| noise_sd * rng.sample::<f64, _>(StandardNormal));
        let y = &x * beta + noise;
        Self::new(x, y)
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    /// Feature dimension `d`.
    pub fn dim(&self) -> usize {
        self.values.ncols() - 1
    }

    pub fn column_names(&self) -> Vec<String> {
        (0..self.dim()).map(|j| format!("x{j}")).chain(std::iter::once("y".to_string())).collect()
    }

    pub fn missing(&self) -> &DMatrix<bool> {
        &self.missing
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }

    /// Value at `(row, col)`, `None` when missing. Column `d` is the target.
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        (!self.missing[(row, col)]).then(|| self.values[(row, col)])
    }

    fn require_complete(&self) -> Result<()> {
        if self.has_missing() {
            return Err(Error::Table("table has missing values; impute first".into()));
        }
        Ok(())
    }

    pub fn features(&self) -> Result<DMatrix<f64>> {
        self.require_complete()?;
        Ok(self.values.columns(0, self.dim()).into_owned())
    }

    pub fn targets(&self) -> Result<DVector<f64>> {
        self.require_complete()?;
        Ok(self.values.column(self.dim()).into_owned())
    }

    /// The sub-table of the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self { values: self.values.select_rows(rows), missing: self.missing.select_rows(rows) }
    }

    /// Means of the observed entries of every column (target last).
    pub fn observed_column_means(&self) -> Result<Vec<f64>> {
        let names = self.column_names();
        (0..self.values.ncols())
            .map(|c| {
                let observed: Vec<f64> = (0..self.rows()).filter_map(|r| self.get(r, c)).collect();
                if observed.is_empty() {
                    return Err(Error::AllMissingColumn { column: names[c].clone() });
                }
                Ok(observed.iter().sum::<f64>() / observed.len() as f64)
            })
            .collect()
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Table(e.to_string()))?.clone();
        let d = headers.len().checked_sub(1).ok_or_else(|| Error::Table("empty header".into()))?;
        // Column position of x0..x{d-1} and y.
        let mut position = vec![usize::MAX; d + 1];
        for (pos, name) in headers.iter().enumerate() {
            let slot = if name == "y" {
                d
            } else {
                name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()).filter(|&j| j < d).ok_or_else(|| {
                    Error::Table(format!("unexpected column `{name}`; expected x0..x{}, y", d.saturating_sub(1)))
                })?
            };
            if position[slot] != usize::MAX {
                return Err(Error::Table(format!("duplicate column `{name}`")));
            }
            position[slot] = pos;
        }
        let mut cells = Vec::new();
        let mut mask = Vec::new();
        let mut rows = 0;
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::Table(e.to_string()))?;
            if record.len() != d + 1 {
                return Err(Error::Table(format!("row {} has {} cells, expected {}", line + 1, record.len(), d + 1)));
            }
            for &pos in &position {
                let cell = &record[pos];
                if cell.is_empty() {
                    cells.push(0.0);
                    mask.push(true);
                } else {
                    let v: f64 = cell.parse().map_err(|_| {
                        Error::Table(format!("row {} column {}: `{cell}` is not a number", line + 1, &headers[pos]))
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Table(format!(
                            "row {} column {}: non-finite value",
                            line + 1,
                            &headers[pos]
                        )));
                    }
                    cells.push(v);
                    mask.push(false);
                }
            }
            rows += 1;
        }
        Ok(Self {
            values: DMatrix::from_row_slice(rows, d + 1, &cells),
            missing: DMatrix::from_row_slice(rows, d + 1, &mask),
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Table(e.to_string());
        w.write_record(self.column_names()).map_err(err)?;
        for r in 0..self.rows() {
            let row: Vec<String> =
                (0..self.values.ncols()).map(|c| self.get(r, c).map(|v| v.to_string()).unwrap_or_default()).collect();
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| Error::Table(e.to_string()))
    }
}

/// Replaces every missing entry by the mean of its column's observed entries.
pub fn impute_mean(table: &FeatureTable) -> Result<FeatureTable> {
    let means = table.observed_column_means()?;
    let mut values = table.values.clone();
    for ((r, c), m) in table.missing.iter().enumerate().map(|(i, m)| ((i % table.rows(), i / table.rows()), m)) {
        if *m {
            values[(r, c)] = means[c];
        }
    }
    Ok(FeatureTable { values, missing: DMatrix::from_element(table.rows(), table.values.ncols(), false) })
}

/// Hides a uniformly random `fraction` of the feature entries.
pub fn mask_random(table: &FeatureTable, fraction: f64, rng: &mut Rng) -> FeatureTable {
    let mut out = table.clone();
    let cells = table.rows() * table.dim();
    let hidden = (fraction * cells as f64).round() as usize;
    for idx in sample_indices(rng, cells, hidden.min(cells)) {
        let (r, c) = (idx / table.dim(), idx % table.dim());
        out.missing[(r, c)] = true;
        out.values[(r, c)] = 0.0;
    }
    out
}

/// Diagonal of the hat matrix `X (XᵀX)⁻¹ Xᵀ`.
pub fn leverage_scores(x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let gram = x.transpose() * x;
    let rank = psd_rank(&gram);
    if rank < x.ncols() {
        return Err(Error::RankDeficient { rank, dim: x.ncols() });
    }
    let chol = Cholesky::new(&gram).map_err(|_| Error::RankDeficient { rank, dim: x.ncols() })?;
    let z = chol.solve_lower(&x.transpose());
    Ok(DVector::from_iterator(x.nrows(), z.column_iter().map(|c| c.norm_squared())))
}

/// Leverage scores normalised to a sampling distribution.
pub fn leverage_probabilities(x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let h = leverage_scores(x)?;
    let total = h.sum();
    Ok(h / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Iid,
    Leverage,
}

/// One least-squares bundle: the solution and its estimated covariance `σ̂²(AᵀA)⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub solution: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl Bundle {
    pub fn datum(&self) -> DataPoint {
        DataPoint::Direct { y: self.solution.clone() }
    }
}

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, Cholesky)> {
    let gram = x.transpose() * x;
    let rank = psd_rank(&gram);
    if rank < x.ncols() {
        return Err(Error::RankDeficient { rank, dim: x.ncols() });
    }
    let chol = Cholesky::new(&gram).map_err(|_| Error::RankDeficient { rank, dim: x.ncols() })?;
    let beta = chol.solve_vec(&(x.transpose() * y));
    Ok((beta, chol))
}

fn residual_variance(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let dof = (x.nrows().saturating_sub(x.ncols())).max(1);
    (y - x * beta).norm_squared() / dof as f64
}

fn row_sampler(x: &DMatrix<f64>, sampling: Sampling) -> Result<Option<WeightedIndex<f64>>> {
    Ok(match sampling {
        Sampling::Iid => None,
        Sampling::Leverage => {
            let p = leverage_probabilities(x)?;
            Some(WeightedIndex::new(p.iter().copied()).map_err(|e| Error::Table(e.to_string()))?)
        }
    })
}

fn draw_bundle(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    sampler: Option<&WeightedIndex<f64>>,
    subset_size: usize,
    rng: &mut Rng,
) -> Result<Bundle> {
    let d = x.ncols();
    if subset_size < d {
        return Err(Error::InsufficientData { needed: d, found: subset_size });
    }
    if x.nrows() < d {
        return Err(Error::InsufficientData { needed: d, found: x.nrows() });
    }
    let mut last = Error::RankDeficient { rank: 0, dim: d };
    for _ in 0..BUNDLE_RETRIES {
        let rows: Vec<usize> = (0..subset_size)
            .map(|_| match sampler {
                Some(w) => w.sample(rng),
                None => rng.random_range(0..x.nrows()),
            })
            .collect();
        let (xs, ys) = (x.select_rows(&rows), y.select_rows(&rows));
        match least_squares(&xs, &ys) {
            Ok((solution, chol)) => {
                let covariance = chol.inverse() * residual_variance(&xs, &ys, &solution);
                return Ok(Bundle { solution, covariance });
            }
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Samples `subset_size` rows with replacement (uniformly or by leverage) and
/// returns their least-squares solution, resampling rank-deficient subsets up
/// to [`BUNDLE_RETRIES`] times.
pub fn ls_bundle(table: &FeatureTable, subset_size: usize, sampling: Sampling, seed: u64) -> Result<Bundle> {
    let (x, y) = (table.features()?, table.targets()?);
    let sampler = row_sampler(&x, sampling)?;
    let mut rng = rng_from(seed, &[0x424e44]);
    draw_bundle(&x, &y, sampler.as_ref(), subset_size, &mut rng)
}

/// Draws used to estimate `E[(AᵀA)⁻¹]` for a bundle player's noise model.
pub const CALIBRATION_DRAWS: usize = 2000;

/// Monte-Carlo estimate of `E[(AᵀA)⁻¹]` over full-rank size-`s` row draws.
fn expected_gram_inverse(
    x: &DMatrix<f64>,
    sampler: Option<&WeightedIndex<f64>>,
    subset_size: usize,
    rng: &mut Rng,
) -> Result<DMatrix<f64>> {
    let d = x.ncols();
    let mut acc = DMatrix::zeros(d, d);
    let mut used = 0usize;
    for _ in 0..CALIBRATION_DRAWS {
        let rows: Vec<usize> = (0..subset_size)
            .map(|_| match sampler {
                Some(w) => w.sample(rng),
                None => rng.random_range(0..x.nrows()),
            })
            .collect();
        let xs = x.select_rows(&rows);
        if let Ok(chol) = Cholesky::new(&(xs.transpose() * &xs)) {
            acc += chol.inverse();
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::RankDeficient { rank: psd_rank(&(x.transpose() * x)), dim: d });
    }
    Ok(acc / used as f64)
}

/// A player whose every datum is a least-squares bundle from a restricted pool of rows.
///
/// The player's model is a direct observation with covariance
/// `σ̂² E[(AᵀA)⁻¹]`: the pool's residual variance times the expected inverse
/// Gram matrix of a size-`s` bundle, estimated by simulating row draws.
#[derive(Debug, Clone)]
pub struct BundleSource {
    x: DMatrix<f64>,
    y: DVector<f64>,
    sampler: Option<WeightedIndex<f64>>,
    subset_size: usize,
    model: PlayerModel,
    rng: Rng,
    budget: Budget,
}

impl BundleSource {
    pub fn new(
        table: &FeatureTable,
        pool_size: usize,
        subset_size: usize,
        sampling: Sampling,
        seed: u64,
        budget: Option<usize>,
    ) -> Result<Self> {
        let d = table.dim();
        if subset_size < d {
            return Err(Error::InsufficientData { needed: d, found: subset_size });
        }
        if pool_size < d || pool_size > table.rows() {
            return Err(Error::InsufficientData { needed: pool_size.max(d), found: table.rows() });
        }
        let mut rng = rng_from(seed, &[0x504f4f4c]);
        let rows = sample_indices(&mut rng, table.rows(), pool_size).into_vec();
        let pool = impute_mean(&table.select_rows(&rows))?;
        let (x, y) = (pool.features()?, pool.targets()?);
        let (beta, _) = least_squares(&x, &y)?;
        let sigma2 = residual_variance(&x, &y, &beta);
        let sampler = row_sampler(&x, sampling)?;
        let cov = expected_gram_inverse(&x, sampler.as_ref(), subset_size, &mut rng_from(seed, &[0x43414c]))?
            * sigma2.max(f64::MIN_POSITIVE);
        let model = DirectObservationModel::new(cov)?.into();
        Ok(Self { x, y, sampler, subset_size, model, rng, budget: Budget::new(budget) })
    }

    pub fn next_bundle(&mut self) -> Result<Bundle> {
        draw_bundle(&self.x, &self.y, self.sampler.as_ref(), self.subset_size, &mut self.rng)
    }
}

impl DataSource for BundleSource {
    fn model(&self) -> &PlayerModel {
        &self.model
    }

    fn draw(&mut self, count: usize) -> Result<Vec<DataPoint>, SourceError> {
        self.budget.take(count)?;
        (0..count).map(|_| Ok(self.next_bundle()?.datum())).collect()
    }
}

/// A player observing `N(θ̂₂, σ² I)` where `θ̂₂` is the least-squares fit of a
/// random `ratio` of the table's rows after masking `nan_fraction` of the
/// feature entries and imputing them with column means.
#[derive(Debug, Clone)]
pub struct NoisyObserverSource {
    centre: DVector<f64>,
    sigma: f64,
    model: PlayerModel,
    rng: Rng,
    budget: Budget,
}

impl NoisyObserverSource {
    pub fn centre(&self) -> &DVector<f64> {
        &self.centre
    }

    pub fn with_budget(mut self, limit: usize) -> Self {
        self.budget = Budget::new(Some(limit));
        self
    }
}

impl DataSource for NoisyObserverSource {
    fn model(&self) -> &PlayerModel {
        &self.model
    }

    fn draw(&mut self, count: usize) -> Result<Vec<DataPoint>, SourceError> {
        self.budget.take(count)?;
        let k = self.centre.len();
        Ok((0..count)
            .map(|_| {
                let z = DVector::<f64>::from_fn(k, |_, _| self.rng.sample(StandardNormal));
                DataPoint::Direct { y: &self.centre + z * self.sigma }
            })
            .collect())
    }
}

pub fn noisy_observer_from_table(
    table: &FeatureTable,
    ratio: f64,
    nan_fraction: f64,
    sigma: f64,
    seed: u64,
) -> Result<NoisyObserverSource> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidConfig(format!("ratio must lie in (0, 1], got {ratio}")));
    }
    if !(0.0..1.0).contains(&nan_fraction) {
        return Err(Error::InvalidConfig(format!("nan fraction must lie in [0, 1), got {nan_fraction}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
    }
    let mut rng = rng_from(seed, &[0x4e4f4953]);
    let take = ((ratio * table.rows() as f64).round() as usize).clamp(1, table.rows());
    let rows = sample_indices(&mut rng, table.rows(), take).into_vec();
    let subset = mask_random(&table.select_rows(&rows), nan_fraction, &mut rng);
    let imputed = impute_mean(&subset)?;
    let (centre, _) = least_squares(&imputed.features()?, &imputed.targets()?)?;
    let model = DirectObservationModel::isotropic(table.dim(), sigma * sigma)?.into();
    Ok(NoisyObserverSource { centre, sigma, model, rng: rng_from(seed, &[0x4f4253]), budget: Budget::new(None) })
}
