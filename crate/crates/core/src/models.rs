//! Player observation families: sampling, likelihoods, scores and Fisher information.
//!
//! Both families are Gaussian and linear in θ. A direct observation is
//! `y = θ + ε` with `ε ~ N(0, Σ)`; a linear observation is `y = Aθ + ε` with a
//! freshly drawn design `A` and `ε ~ N(0, σ² I)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fisher::{FisherMatrix, Provenance};
use crate::linalg::{symmetrize, Cholesky};
use crate::rng::rng_from;

/// Smallest noise estimate returned by [`estimate_noise_sd`].
pub const NOISE_SD_FLOOR: f64 = 1e-8;

/// The true parameter θ*.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueParameter(DVector<f64>);

impl TrueParameter {
    pub fn new(theta: DVector<f64>) -> Result<Self> {
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: "true parameter" });
        }
        Ok(Self(theta))
    }

    pub fn from_slice(theta: &[f64]) -> Result<Self> {
        Self::new(DVector::from_row_slice(theta))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectObservationModel {
    noise_cov: DMatrix<f64>,
    noise_chol: Cholesky,
    noise_precision: DMatrix<f64>,
}

impl DirectObservationModel {
    pub fn new(noise_cov: DMatrix<f64>) -> Result<Self> {
        let noise_cov = symmetrize(&noise_cov)?;
        let noise_chol = Cholesky::new(&noise_cov)?;
        let noise_precision = noise_chol.inverse();
        Ok(Self { noise_cov, noise_chol, noise_precision })
    }

    /// `σ² I_k`.
    pub fn isotropic(k: usize, variance: f64) -> Result<Self> {
        Self::new(DMatrix::identity(k, k) * variance)
    }

    pub fn dim(&self) -> usize {
        self.noise_cov.nrows()
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn noise_precision(&self) -> &DMatrix<f64> {
        &self.noise_precision
    }
}

/// Law of the per-datum design matrix of a linear player.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignLaw {
    /// A single row `a ~ N(0, I_k)`.
    StandardNormal,
    /// Observes one block of θ: block `j` is chosen with probability
    /// `mode_probs[j]` and the design selects coordinates `j·block..(j+1)·block`.
    /// Models labelled multi-mode mean estimation.
    ModeSelect { mode_probs: Vec<f64>, block: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    k: usize,
    design: DesignLaw,
    noise_sd: f64,
    noise_known: bool,
}

impl LinearGaussianModel {
    pub fn new(k: usize, design: DesignLaw, noise_sd: f64, noise_known: bool) -> Result<Self> {
        if !(noise_sd > 0.0) || !noise_sd.is_finite() {
            return Err(Error::InvalidConfig(format!("noise sd must be positive, got {noise_sd}")));
        }
        if let DesignLaw::ModeSelect { mode_probs, block } = &design {
            if *block == 0 || mode_probs.len() * block != k {
                return Err(Error::DimensionMismatch { expected: k, found: mode_probs.len() * block });
            }
            if mode_probs.iter().any(|p| !(*p >= 0.0)) || mode_probs.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidConfig("mode probabilities must be non-negative with positive sum".into()));
            }
        }
        Ok(Self { k, design, noise_sd, noise_known })
    }

    pub fn standard(k: usize, noise_sd: f64, noise_known: bool) -> Result<Self> {
        Self::new(k, DesignLaw::StandardNormal, noise_sd, noise_known)
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn design(&self) -> &DesignLaw {
        &self.design
    }

    pub fn noise_known(&self) -> bool {
        self.noise_known
    }

    /// The generating noise level. Inference paths for an unknown-noise model
    /// must not read this; they take a plug-in estimate instead.
    pub fn true_noise_sd(&self) -> f64 {
        self.noise_sd
    }

    /// Noise standard deviation usable by inference: the known value, or the plug-in.
    pub fn inference_noise_sd(&self, plug_in: Option<f64>) -> Result<f64> {
        if self.noise_known {
            Ok(self.noise_sd)
        } else {
            plug_in.ok_or(Error::MissingNoiseEstimate)
        }
    }

    /// `E[AᵀA]`.
    pub fn design_second_moment(&self) -> DMatrix<f64> {
        match &self.design {
            DesignLaw::StandardNormal => DMatrix::identity(self.k, self.k),
            DesignLaw::ModeSelect { mode_probs, block } => {
                let total: f64 = mode_probs.iter().sum();
                let diag = DVector::from_fn(self.k, |r, _| mode_probs[r / block] / total);
                DMatrix::from_diagonal(&diag)
            }
        }
    }

    fn draw_design<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        match &self.design {
            DesignLaw::StandardNormal => DMatrix::from_fn(1, self.k, |_, _| rng.sample(StandardNormal)),
            DesignLaw::ModeSelect { mode_probs, block } => {
                let j = WeightedIndex::new(mode_probs).expect("validated weights").sample(rng);
                DMatrix::from_fn(*block, self.k, |r, c| if c == j * block + r { 1.0 } else { 0.0 })
            }
        }
    }
}

/// A player's observation family `F_{i,θ}`.
#[derive(Debug, Clone, PartialEq)]
pub enum PlayerModel {
    Direct(DirectObservationModel),
    Linear(LinearGaussianModel),
}

impl PlayerModel {
    pub fn dim(&self) -> usize {
        match self {
            PlayerModel::Direct(m) => m.dim(),
            PlayerModel::Linear(m) => m.dim(),
        }
    }

    /// True when inference needs a plug-in noise estimate.
    pub fn needs_noise_estimate(&self) -> bool {
        matches!(self, PlayerModel::Linear(m) if !m.noise_known())
    }
}

impl From<DirectObservationModel> for PlayerModel {
    fn from(m: DirectObservationModel) -> Self {
        PlayerModel::Direct(m)
    }
}

impl From<LinearGaussianModel> for PlayerModel {
    fn from(m: LinearGaussianModel) -> Self {
        PlayerModel::Linear(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataPoint {
    /// `y ≈ θ`.
    Direct { y: DVector<f64> },
    /// `y ≈ Aθ` with `A` of shape `d × k`.
    Linear { design: DMatrix<f64>, y: DVector<f64> },
}

impl DataPoint {
    pub fn linear_row(a: DVector<f64>, y: f64) -> Self {
        DataPoint::Linear { design: DMatrix::from_row_slice(1, a.len(), a.as_slice()), y: DVector::from_element(1, y) }
    }
}

/// An ordered collection of one player's data.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataSet {
    pub player: usize,
    pub points: Vec<DataPoint>,
}

impl DataSet {
    pub fn new(player: usize, points: Vec<DataPoint>) -> Self {
        Self { player, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn extend(&mut self, more: impl IntoIterator<Item = DataPoint>) {
        self.points.extend(more);
    }
}

/// Draws one datum from `F_{θ*}`.
pub fn draw_point<R: rand::Rng + ?Sized>(model: &PlayerModel, theta: &DVector<f64>, rng: &mut R) -> DataPoint {
    match model {
        PlayerModel::Direct(m) => {
            let z = DVector::<f64>::from_fn(m.dim(), |_, _| rng.sample(StandardNormal));
            DataPoint::Direct { y: theta + m.noise_chol.l() * z }
        }
        PlayerModel::Linear(m) => {
            let design = m.draw_design(rng);
            let noise =
                DVector::<f64>::from_fn(design.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal) * m.noise_sd);
            let y = &design * theta + noise;
            DataPoint::Linear { design, y }
        }
    }
}

/// `m` i.i.d. draws from `F_{θ*}`, deterministic in `seed`.
pub fn sample(model: &PlayerModel, theta: &TrueParameter, m: usize, seed: u64) -> Result<DataSet> {
    check_dim(model, theta.as_vector())?;
    let mut rng = rng_from(seed, &[0x53414d50]);
    let points = (0..m).map(|_| draw_point(model, theta.as_vector(), &mut rng)).collect();
    Ok(DataSet::new(0, points))
}

fn check_dim(model: &PlayerModel, theta: &DVector<f64>) -> Result<()> {
    if theta.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: theta.len() });
    }
    Ok(())
}

fn check_datum(model: &PlayerModel, datum: &DataPoint) -> Result<()> {
    let k = model.dim();
    match (model, datum) {
        (PlayerModel::Direct(_), DataPoint::Direct { y }) if y.len() == k => Ok(()),
        (PlayerModel::Linear(_), DataPoint::Linear { design, y })
            if design.ncols() == k && design.nrows() == y.len() =>
        {
            Ok(())
        }
        _ => Err(Error::InvalidDatum(format!("datum {datum:?} does not fit a {k}-dimensional model"))),
    }
}

pub fn log_likelihood(
    model: &PlayerModel,
    theta: &DVector<f64>,
    datum: &DataPoint,
    noise_sd_hat: Option<f64>,
) -> Result<f64> {
    check_dim(model, theta)?;
    check_datum(model, datum)?;
    match (model, datum) {
        (PlayerModel::Direct(m), DataPoint::Direct { y }) => {
            let k = m.dim() as f64;
            let r = y - theta;
            Ok(-0.5 * (k * (2.0 * PI).ln() + m.noise_chol.log_det() + m.noise_chol.mahalanobis_sq(&r)))
        }
        (PlayerModel::Linear(m), DataPoint::Linear { design, y }) => {
            let sd = m.inference_noise_sd(noise_sd_hat)?;
            let d = y.len() as f64;
            let r = y - design * theta;
            Ok(-0.5 * d * (2.0 * PI * sd * sd).ln() - r.norm_squared() / (2.0 * sd * sd))
        }
        _ => unreachable!("checked by check_datum"),
    }
}

/// Analytic gradient of the log-likelihood in θ.
pub fn score(
    model: &PlayerModel,
    theta: &DVector<f64>,
    datum: &DataPoint,
    noise_sd_hat: Option<f64>,
) -> Result<DVector<f64>> {
    check_dim(model, theta)?;
    check_datum(model, datum)?;
    match (model, datum) {
        (PlayerModel::Direct(m), DataPoint::Direct { y }) => Ok(m.noise_precision() * (y - theta)),
        (PlayerModel::Linear(m), DataPoint::Linear { design, y }) => {
            let sd = m.inference_noise_sd(noise_sd_hat)?;
            Ok(design.transpose() * (y - design * theta) / (sd * sd))
        }
        _ => unreachable!("checked by check_datum"),
    }
}

/// Hessian of the log-likelihood in θ (constant for these families).
pub fn log_likelihood_hessian(
    model: &PlayerModel,
    datum: &DataPoint,
    noise_sd_hat: Option<f64>,
) -> Result<DMatrix<f64>> {
    check_datum(model, datum)?;
    let (precision, _) = information_terms(model, datum, noise_sd_hat)?;
    Ok(-precision)
}

/// Likelihood contribution in information form: `(AᵀR⁻¹A, AᵀR⁻¹y)`.
pub(crate) fn information_terms(
    model: &PlayerModel,
    datum: &DataPoint,
    noise_sd_hat: Option<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_datum(model, datum)?;
    match (model, datum) {
        (PlayerModel::Direct(m), DataPoint::Direct { y }) => Ok((m.noise_precision().clone(), m.noise_precision() * y)),
        (PlayerModel::Linear(m), DataPoint::Linear { design, y }) => {
            let sd = m.inference_noise_sd(noise_sd_hat)?;
            let w = 1.0 / (sd * sd);
            Ok((design.transpose() * design * w, design.transpose() * y * w))
        }
        _ => unreachable!("checked by check_datum"),
    }
}

/// Expected Fisher information of one datum; θ-independent for these families.
pub fn analytic_fisher(model: &PlayerModel, noise_sd_hat: Option<f64>) -> Result<FisherMatrix> {
    let matrix = match model {
        PlayerModel::Direct(m) => m.noise_precision().clone(),
        PlayerModel::Linear(m) => {
            let sd = m.inference_noise_sd(noise_sd_hat)?;
            m.design_second_moment() / (sd * sd)
        }
    };
    FisherMatrix::new(matrix, Provenance::Analytic)
}

/// Residual-variance noise estimate of a linear player.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseEstimate {
    pub sd: f64,
    /// Set when the residuals vanished and the estimate sits at [`NOISE_SD_FLOOR`].
    pub floored: bool,
}

/// `σ̂² = (1/n) Σ (y_j − a_jᵀθ̄)²` over all observed scalars.
pub fn estimate_noise_sd(model: &PlayerModel, data: &DataSet, theta_bar: &DVector<f64>) -> Result<NoiseEstimate> {
    if !matches!(model, PlayerModel::Linear(_)) {
        return Err(Error::InvalidConfig("noise estimation applies to linear models only".into()));
    }
    check_dim(model, theta_bar)?;
    if data.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, found: data.len() });
    }
    let (mut rss, mut count) = (0.0, 0usize);
    for datum in &data.points {
        check_datum(model, datum)?;
        if let DataPoint::Linear { design, y } = datum {
            rss += (y - design * theta_bar).norm_squared();
            count += y.len();
        }
    }
    let sd = (rss / count as f64).sqrt();
    if sd.is_finite() && sd > NOISE_SD_FLOOR {
        Ok(NoiseEstimate { sd, floored: false })
    } else {
        Ok(NoiseEstimate { sd: NOISE_SD_FLOOR, floored: true })
    }
}
