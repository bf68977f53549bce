//! Multivariate Gaussian numerics: entropy, KL divergences and Monte-Carlo
//! distance estimators.

use std::f64::consts::{E, PI};

use nalgebra::{DMatrix, DVector};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, Cholesky};
use crate::rng::rng_from;

/// Minimum sample count accepted by the Monte-Carlo estimators.
pub const MIN_MC_SAMPLES: usize = 1000;

/// A Monte-Carlo estimate together with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// A multivariate normal distribution with symmetric positive-definite covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: Cholesky,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), found: covariance.nrows() });
        }
        if mean.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: "mean" });
        }
        let covariance = symmetrize(&covariance)?;
        let chol = Cholesky::new(&covariance)?;
        Ok(Self { mean, covariance, chol })
    }

    /// `N(0, I_k)`.
    pub fn standard(k: usize) -> Self {
        Self::new(DVector::zeros(k), DMatrix::identity(k, k)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }

    pub fn log_det_cov(&self) -> f64 {
        self.chol.log_det()
    }

    /// Precision matrix `Σ⁻¹`.
    pub fn precision(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// Same mean, covariance multiplied by `c > 0`.
    pub fn scale_cov(&self, c: f64) -> Result<Self> {
        Self::new(self.mean.clone(), &self.covariance * c)
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let k = self.dim() as f64;
        -0.5 * (k * (2.0 * PI).ln() + self.log_det_cov() + self.chol.mahalanobis_sq(&(x - &self.mean)))
    }

    /// Draws `θ = μ + L z` and also returns `‖z‖²`, so callers get `log p(θ)`
    /// without a second triangular solve.
    fn draw_with_norm<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, f64) {
        let z = DVector::<f64>::from_fn(self.dim(), |_, _| rng.sample(StandardNormal));
        let x = &self.mean + self.chol.l() * &z;
        (x, z.norm_squared())
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        self.draw_with_norm(rng).0
    }

    fn log_norm_const(&self) -> f64 {
        -0.5 * (self.dim() as f64 * (2.0 * PI).ln() + self.log_det_cov())
    }
}

/// Axis-aligned uniform distribution on `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxUniform {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxUniform {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), found: upper.len() });
        }
        for (axis, (&lo, &hi)) in lower.iter().zip(upper.iter()).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::DegenerateBox { axis, lower: lo, upper: hi });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    /// `ln λ(Θ_U)`.
    pub fn log_volume(&self) -> f64 {
        self.lower.iter().zip(self.upper.iter()).map(|(lo, hi)| (hi - lo).ln()).sum()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter().zip(self.lower.iter().zip(self.upper.iter())).all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn density(&self, x: &DVector<f64>) -> f64 {
        if self.contains(x) {
            (-self.log_volume()).exp()
        } else {
            0.0
        }
    }
}

/// Differential entropy `(k/2) ln(2πe) + ½ ln|Σ|`.
pub fn entropy(p: &Gaussian) -> f64 {
    0.5 * (p.dim() as f64 * (2.0 * PI * E).ln() + p.log_det_cov())
}

/// Closed-form `KL(P ‖ Q)` between Gaussians.
pub fn kl_gauss(p: &Gaussian, q: &Gaussian) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch { expected: q.dim(), found: p.dim() });
    }
    let lq = q.cholesky();
    // tr(Σ_Q⁻¹ Σ_P) = ‖L_Q⁻¹ L_P‖_F²
    let trace = lq.solve_lower(p.cholesky().l()).norm_squared();
    let maha = lq.mahalanobis_sq(&(q.mean() - p.mean()));
    let k = p.dim() as f64;
    Ok(0.5 * (trace + maha - k + q.log_det_cov() - p.log_det_cov()))
}

/// Monte-Carlo estimate of the extended divergence
/// `∫_{Θ_U} p(θ) [ln p(θ) + ln λ(Θ_U)] dθ` with draws from `P`.
///
/// Uses the identity `∫ p ln p = −H(P)` and estimates only the part of the
/// integrand that falls outside the box, so the estimator's variance
/// vanishes as P's mass concentrates inside `Θ_U`.
pub fn extended_kl_gauss_box(p: &Gaussian, u: &BoxUniform, samples: usize, seed: u64) -> Result<McEstimate> {
    if p.dim() != u.dim() {
        return Err(Error::DimensionMismatch { expected: u.dim(), found: p.dim() });
    }
    if samples < MIN_MC_SAMPLES {
        return Err(Error::TooFewSamples { needed: MIN_MC_SAMPLES, found: samples });
    }
    let log_vol = u.log_volume();
    let c = p.log_norm_const();
    let mut rng = rng_from(seed, &[0x4b4c45]);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let (x, z2) = p.draw_with_norm(&mut rng);
        if !u.contains(&x) {
            let g = c - 0.5 * z2 + log_vol;
            sum += g;
            sum_sq += g * g;
        }
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq / n - mean * mean) * n / (n - 1.0)).max(0.0);
    Ok(McEstimate { estimate: -entropy(p) + log_vol - mean, std_error: (var / n).sqrt() })
}

/// Monte-Carlo estimate of the total-variation distance `½∫|p − q|`.
///
/// Importance-samples from the mixture `½(P + Q)` with half the draws from
/// each component; the weight `|p − q|/(p + q)` equals `|tanh((ln p − ln q)/2)|`.
pub fn tv_estimate_mc(p: &Gaussian, q: &Gaussian, samples: usize, seed: u64) -> Result<McEstimate> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), found: q.dim() });
    }
    if samples < 2 {
        return Err(Error::TooFewSamples { needed: 2, found: samples });
    }
    let half = samples / 2;
    let mut rng = rng_from(seed, &[0x5456]);
    let mut side = |from: &Gaussian, other: &Gaussian| {
        let (c_from, c_other) = (from.log_norm_const(), other.log_norm_const());
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..half {
            let (x, z2) = from.draw_with_norm(&mut rng);
            let l_from = c_from - 0.5 * z2;
            let l_other = c_other - 0.5 * other.cholesky().mahalanobis_sq(&(&x - other.mean()));
            let w = (0.5 * (l_from - l_other)).tanh().abs();
            s += w;
            s2 += w * w;
        }
        let n = half as f64;
        let mean = s / n;
        (mean, ((s2 / n - mean * mean) * n / (n - 1.0).max(1.0)).max(0.0) / n)
    };
    let (mp, vp) = side(p, q);
    let (mq, vq) = side(q, p);
    Ok(McEstimate { estimate: 0.5 * (mp + mq), std_error: 0.5 * (vp + vq).sqrt() })
}
