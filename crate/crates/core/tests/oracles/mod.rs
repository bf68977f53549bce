//! Independent numerical oracles shared by the integration tests.
//!
//! Nothing here calls into the library; every routine is a brute-force
//! reference used to cross-check it.

#![allow(dead_code, clippy::too_many_arguments)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature on `[a, b]`, started from 16 panels so narrow
/// peaks are not missed.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let panels = 16;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let (lo, hi) = (a + p as f64 * h, a + (p + 1) as f64 * h);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            adaptive_step(&f, lo, hi, fa, fm, fb, simpson(fa, fm, fb, lo, hi), tol / panels as f64, 40)
        })
        .sum()
}

/// Iterated adaptive Simpson over the rectangle `[ax, bx] × [ay, by]`.
pub fn integrate_2d<F: Fn(f64, f64) -> f64>(f: F, (ax, bx): (f64, f64), (ay, by): (f64, f64), tol: f64) -> f64 {
    integrate(|x| integrate(|y| f(x, y), ay, by, tol), ax, bx, tol)
}

/// Composite Simpson on a fixed tensor grid with `n` (even) intervals per axis.
pub fn tensor_simpson_2d<F: Fn(f64, f64) -> f64>(f: F, (ax, bx): (f64, f64), (ay, by): (f64, f64), n: usize) -> f64 {
    assert!(n.is_multiple_of(2));
    let w = |i: usize| {
        if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };
    let (hx, hy) = ((bx - ax) / n as f64, (by - ay) / n as f64);
    let mut total = 0.0;
    for i in 0..=n {
        for j in 0..=n {
            total += w(i) * w(j) * f(ax + i as f64 * hx, ay + j as f64 * hy);
        }
    }
    total * hx * hy / 9.0
}

/// Determinant by Laplace expansion along the first row.
pub fn cofactor_det(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    match n {
        0 => 1.0,
        1 => m[(0, 0)],
        _ => (0..n)
            .map(|c| {
                let minor = m.clone().remove_row(0).remove_column(c);
                let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[(0, c)] * cofactor_det(&minor)
            })
            .sum(),
    }
}

/// Inverse by adjugate, for the small matrices the oracles need.
pub fn cofactor_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let det = cofactor_det(m);
    DMatrix::from_fn(n, n, |r, c| {
        let minor = m.clone().remove_row(c).remove_column(r);
        let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
        sign * cofactor_det(&minor) / det
    })
}

/// Density of `N(mean, cov)` evaluated with cofactor determinant and inverse.
pub fn normal_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let k = x.len() as f64;
    let d = x - mean;
    let q = (d.transpose() * cofactor_inverse(cov) * &d)[(0, 0)];
    (-0.5 * q).exp() / ((2.0 * PI).powf(k) * cofactor_det(cov)).sqrt()
}

pub fn normal_pdf_1d(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// Standard normal CDF by quadrature of the density.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 + integrate(|t| normal_pdf_1d(t, 0.0, 1.0), 0.0, z, 1e-13)
}

/// Random SPD matrix `B Bᵀ + ε I` with entries of `B` uniform in `[-1, 1]`.
pub fn random_spd<R: Rng>(rng: &mut R, k: usize, ridge: f64) -> DMatrix<f64> {
    let b = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(k, k) * ridge
}

pub fn random_vector<R: Rng>(rng: &mut R, k: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(k, |_, _| rng.random_range(-scale..scale))
}

/// Central finite-difference gradient.
pub fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let (mut up, mut down) = (x.clone(), x.clone());
        up[i] += h;
        down[i] -= h;
        (f(&up) - f(&down)) / (2.0 * h)
    })
}

/// Shapley values by averaging marginal contributions over all `n!` orderings.
pub fn shapley_by_permutations(n: usize, v: impl Fn(u32) -> f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut phi = vec![0.0; n];
    let mut count = 0usize;
    permute(&mut order, 0, &mut |perm| {
        let mut mask = 0u32;
        for &p in perm {
            let before = v(mask);
            mask |= 1 << p;
            phi[p] += v(mask) - before;
        }
        count += 1;
    });
    phi.iter().map(|x| x / count as f64).collect()
}

fn permute(items: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}

/// Banzhaf values by listing every coalition without `i`.
pub fn banzhaf_by_listing(n: usize, v: impl Fn(u32) -> f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let bit = 1u32 << i;
            let total: f64 = (0..1u32 << n).filter(|s| s & bit == 0).map(|s| v(s | bit) - v(s)).sum();
            total / (1u64 << (n - 1)) as f64
        })
        .collect()
}

pub fn frobenius_rel(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    (a - reference).norm() / reference.norm()
}

/// Sample mean and population-corrected standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Box-Muller standard normal draw.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}
