//! Symmetric positive-definite helpers built on a Cholesky factor.
//!
//! Determinants and inverses are never formed directly; every log-determinant
//! is a sum of log pivots and every solve goes through the triangular factor.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative asymmetry above which a matrix is rejected rather than symmetrized.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Returns `(M + Mᵀ)/2`, or an error if `M` is not square or is asymmetric
/// beyond [`SYMMETRY_TOL`] relative to its largest entry.
pub fn symmetrize(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "matrix" });
    }
    let scale = m.amax();
    let asym = (m - m.transpose()).amax();
    if scale > 0.0 && asym > SYMMETRY_TOL * scale {
        return Err(Error::Asymmetric { rel: asym / scale });
    }
    Ok((m + m.transpose()) * 0.5)
}

/// Lower-triangular Cholesky factor `L` with `M = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    /// Factors a symmetric matrix. Only the lower triangle is read.
    ///
    /// Fails with the 1-based index of the first leading minor whose pivot is
    /// not strictly positive.
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
        }
        let n = m.nrows();
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut d = m[(j, j)];
            for p in 0..j {
                d -= l[(j, p)] * l[(j, p)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { minor: j + 1 });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for p in 0..j {
                    s -= l[(i, p)] * l[(j, p)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `ln |M| = 2 Σ ln L_jj`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `L x = b`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.l.solve_lower_triangular(b).expect("Cholesky diagonal is strictly positive")
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self.solve_lower(b);
        self.l.tr_solve_lower_triangular(&y).expect("Cholesky diagonal is strictly positive")
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self.l.solve_lower_triangular(b).expect("Cholesky diagonal is strictly positive");
        self.l.tr_solve_lower_triangular(&y).expect("Cholesky diagonal is strictly positive")
    }

    /// `M⁻¹` via two triangular solves against the identity.
    pub fn inverse(&self) -> DMatrix<f64> {
        let mut inv = self.solve(&DMatrix::identity(self.dim(), self.dim()));
        inv = (&inv + inv.transpose()) * 0.5;
        inv
    }

    /// Squared Mahalanobis norm `xᵀ M⁻¹ x = ‖L⁻¹x‖²`.
    pub fn mahalanobis_sq(&self, x: &DVector<f64>) -> f64 {
        self.l.solve_lower_triangular(x).expect("Cholesky diagonal is strictly positive").norm_squared()
    }
}

/// `ln |M|` of a symmetric positive-definite matrix, via Cholesky pivots.
pub fn log_det(m: &DMatrix<f64>) -> Result<f64> {
    Ok(Cholesky::new(m)?.log_det())
}

/// Numerical rank of a symmetric positive-semidefinite matrix.
pub fn psd_rank(m: &DMatrix<f64>) -> usize {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax();
    if max <= 0.0 {
        return 0;
    }
    let tol = max * (m.nrows() as f64) * f64::EPSILON * 16.0;
    eig.eigenvalues.iter().filter(|&&e| e > tol).count()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}
