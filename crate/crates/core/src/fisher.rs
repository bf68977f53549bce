//! Fisher information matrices: analytic, sampled (score outer products) and joint.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{log_det, min_eigenvalue, symmetrize};
use crate::models::{score, DataSet, PlayerModel};

/// Slack allowed below zero on the smallest eigenvalue, relative to `max(1, |F|_max)`.
pub const PSD_SLACK: f64 = 1e-10;

const OUTER_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Analytic,
    Sampled { m: usize, theta_bar: Vec<f64> },
    Joint,
}

/// A symmetric positive-semidefinite `k × k` information matrix.
///
/// Positive definiteness is only required where the matrix is inverted or
/// log-determined, and is checked there.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix {
    matrix: DMatrix<f64>,
    provenance: Provenance,
}

impl FisherMatrix {
    pub fn new(matrix: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        let matrix = symmetrize(&matrix)?;
        if matrix.nrows() > 0 {
            let slack = PSD_SLACK * matrix.amax().max(1.0);
            if min_eigenvalue(&matrix) < -slack {
                return Err(Error::NotPositiveDefinite { minor: 0 });
            }
        }
        Ok(Self { matrix, provenance })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.matrix * c, self.provenance.clone())
    }
}

/// `Î = (1/m) Σ_j s_j s_jᵀ` with `s_j` the score of datum `j` at `θ̄`.
///
/// Outer products are accumulated in fixed-size chunks and reduced in chunk
/// order, so the result is bit-identical for any thread count.
pub fn sample_fisher(
    model: &PlayerModel,
    theta_bar: &DVector<f64>,
    data: &DataSet,
    noise_sd_hat: Option<f64>,
) -> Result<FisherMatrix> {
    if data.is_empty() {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    if theta_bar.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "plug-in parameter" });
    }
    let k = model.dim();
    let partials: Vec<DMatrix<f64>> = data
        .points
        .par_chunks(OUTER_CHUNK)
        .map(|chunk| {
            let mut acc = DMatrix::zeros(k, k);
            for datum in chunk {
                let s = score(model, theta_bar, datum, noise_sd_hat)?;
                acc.syger(1.0, &s, &s, 1.0);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = DMatrix::zeros(k, k);
    for p in &partials {
        total += p;
    }
    total.fill_upper_triangle_with_lower_triangle();
    let m = data.len();
    FisherMatrix::new(total / m as f64, Provenance::Sampled { m, theta_bar: theta_bar.iter().copied().collect() })
}

/// `Σ_i w_i F_i` for non-negative weights.
pub fn joint_fisher(parts: &[(FisherMatrix, f64)]) -> Result<FisherMatrix> {
    let Some((first, _)) = parts.first() else {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    };
    let k = first.dim();
    let mut total = DMatrix::zeros(k, k);
    for (f, w) in parts {
        if f.dim() != k {
            return Err(Error::DimensionMismatch { expected: k, found: f.dim() });
        }
        if !(*w >= 0.0) || !w.is_finite() {
            return Err(Error::InvalidConfig(format!("Fisher weight must be non-negative, got {w}")));
        }
        total += f.matrix() * *w;
    }
    let provenance = if parts.len() == 1 { first.provenance().clone() } else { Provenance::Joint };
    FisherMatrix::new(total, provenance)
}

pub fn log_det_fisher(f: &FisherMatrix) -> Result<f64> {
    log_det(f.matrix())
}

/// `(|F_a| / |F_b|)^{1/k}`, computed from log-determinants.
pub fn gen_fisher_ratio(a: &FisherMatrix, b: &FisherMatrix, k: usize) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(((log_det_fisher(a)? - log_det_fisher(b)?) / k as f64).exp())
}
