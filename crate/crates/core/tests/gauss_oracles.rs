mod oracles;

use std::f64::consts::PI;

use fairgame_core::{entropy, extended_kl_gauss_box, kl_gauss, log_det, tv_estimate_mc, BoxUniform, Gaussian};
use nalgebra::{DMatrix, DVector};
use oracles::*;
use proptest::prelude::*;
use rand::Rng;

fn gaussian_1d(mean: f64, var: f64) -> Gaussian {
    Gaussian::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var)).unwrap()
}

#[test]
fn log_det_matches_cofactor_expansion() {
    for seed in [7, 8, 9, 10, 11] {
        let mut r = rng(seed);
        let m = random_spd(&mut r, 4, 0.1);
        let oracle = cofactor_det(&m).ln();
        assert!((log_det(&m).unwrap() - oracle).abs() < 1e-10, "seed {seed}");
    }
}

#[test]
fn kl_1d_matches_adaptive_quadrature() {
    let mut r = rng(101);
    for case in 0..10 {
        let (mp, mq) = (r.random_range(-2.0f64..2.0), r.random_range(-2.0f64..2.0));
        let (vp, vq) = (r.random_range(0.2f64..3.0), r.random_range(0.2f64..3.0));
        let sd = f64::sqrt(vp);
        let oracle = integrate(
            |x| {
                let p = normal_pdf_1d(x, mp, vp);
                if p == 0.0 {
                    0.0
                } else {
                    p * (p / normal_pdf_1d(x, mq, vq)).ln()
                }
            },
            mp - 12.0 * sd,
            mp + 12.0 * sd,
            1e-12,
        );
        let kl = kl_gauss(&gaussian_1d(mp, vp), &gaussian_1d(mq, vq)).unwrap();
        assert!((kl - oracle).abs() < 1e-6, "case {case}: {kl} vs {oracle}");
    }
}

struct Density2 {
    mean: DVector<f64>,
    inv: DMatrix<f64>,
    log_norm: f64,
}

impl Density2 {
    fn new(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Self {
        let log_norm = -(2.0 * PI).ln() - 0.5 * cofactor_det(cov).ln();
        Self { mean: mean.clone(), inv: cofactor_inverse(cov), log_norm }
    }

    fn log_pdf(&self, x: f64, y: f64) -> f64 {
        let d = DVector::from_vec(vec![x - self.mean[0], y - self.mean[1]]);
        self.log_norm - 0.5 * (d.transpose() * &self.inv * &d)[(0, 0)]
    }
}

fn kl_2d_oracle(mp: &DVector<f64>, cp: &DMatrix<f64>, mq: &DVector<f64>, cq: &DMatrix<f64>) -> f64 {
    let (p, q) = (Density2::new(mp, cp), Density2::new(mq, cq));
    let (sx, sy) = (cp[(0, 0)].sqrt(), cp[(1, 1)].sqrt());
    tensor_simpson_2d(
        |x, y| {
            let lp = p.log_pdf(x, y);
            lp.exp() * (lp - q.log_pdf(x, y))
        },
        (mp[0] - 10.0 * sx, mp[0] + 10.0 * sx),
        (mp[1] - 10.0 * sy, mp[1] + 10.0 * sy),
        400,
    )
}

#[test]
fn kl_2d_matches_tensor_quadrature() {
    let mut r = rng(202);
    for case in 0..10 {
        let (cp, cq) = (random_spd(&mut r, 2, 0.3), random_spd(&mut r, 2, 0.3));
        let (mp, mq) = (random_vector(&mut r, 2, 1.5), random_vector(&mut r, 2, 1.5));
        let oracle = kl_2d_oracle(&mp, &cp, &mq, &cq);
        let kl = kl_gauss(&Gaussian::new(mp, cp).unwrap(), &Gaussian::new(mq, cq).unwrap()).unwrap();
        assert!((kl - oracle).abs() < 1e-4, "case {case}: {kl} vs {oracle}");
    }
}

#[test]
fn kl_2d_diagonal_case() {
    let mp = DVector::from_vec(vec![1.0, 0.0]);
    let cp = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]));
    let (mq, cq) = (DVector::zeros(2), DMatrix::identity(2, 2));
    let (p, q) = (Density2::new(&mp, &cp), Density2::new(&mq, &cq));
    let oracle = integrate_2d(
        |x, y| {
            let lp = p.log_pdf(x, y);
            lp.exp() * (lp - q.log_pdf(x, y))
        },
        (1.0 - 8.0, 1.0 + 8.0),
        (-12.0, 12.0),
        1e-10,
    );
    let kl = kl_gauss(&Gaussian::new(mp, cp).unwrap(), &Gaussian::new(mq, cq).unwrap()).unwrap();
    assert!((kl - oracle).abs() < 1e-5, "{kl} vs {oracle}");
}

fn extended_kl_oracle(mean: f64, var: f64, lo: f64, hi: f64) -> f64 {
    let log_vol = (hi - lo).ln();
    integrate(
        |x| {
            let p = normal_pdf_1d(x, mean, var);
            if p == 0.0 {
                0.0
            } else {
                p * (p.ln() + log_vol)
            }
        },
        lo,
        hi,
        1e-12,
    )
}

#[test]
fn extended_kl_matches_quadrature() {
    let u = BoxUniform::new(DVector::from_element(1, -1.0), DVector::from_element(1, 1.0)).unwrap();
    let est = extended_kl_gauss_box(&gaussian_1d(0.0, 0.01), &u, 20_000, 3).unwrap();
    let oracle = extended_kl_oracle(0.0, 0.01, -1.0, 1.0);
    assert!((est.estimate - oracle).abs() < 1e-3, "{} vs {oracle}", est.estimate);

    // Substantial mass outside the box.
    let est = extended_kl_gauss_box(&gaussian_1d(0.8, 0.25), &u, 200_000, 4).unwrap();
    let oracle = extended_kl_oracle(0.8, 0.25, -1.0, 1.0);
    assert!((est.estimate - oracle).abs() < 4.0 * est.std_error, "{est:?} vs {oracle}");
}

#[test]
fn extended_kl_error_decays_with_box_width() {
    let p = gaussian_1d(0.3, 0.04);
    let sd = 0.2;
    let errors: Vec<f64> = [4.0, 6.0, 10.0]
        .iter()
        .map(|w| {
            let u = BoxUniform::new(
                DVector::from_element(1, 0.3 - w * sd / 2.0),
                DVector::from_element(1, 0.3 + w * sd / 2.0),
            )
            .unwrap();
            let est = extended_kl_gauss_box(&p, &u, 50_000, 9).unwrap();
            (est.estimate - (-entropy(&p) + u.log_volume())).abs()
        })
        .collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
}

#[test]
fn tv_matches_closed_form() {
    let oracle = 2.0 * std_normal_cdf(1.5) - 1.0;
    let est = tv_estimate_mc(&gaussian_1d(0.0, 1.0), &gaussian_1d(3.0, 1.0), 100_000, 17).unwrap();
    assert!((est.estimate - oracle).abs() < 0.01, "{est:?} vs {oracle}");
    assert!((oracle - 0.8664).abs() < 1e-4);
}

#[test]
fn tv_of_identical_is_zero() {
    let p = gaussian_1d(0.5, 2.0);
    let est = tv_estimate_mc(&p, &p, 10_000, 1).unwrap();
    assert!(est.estimate.abs() <= 3.0 * est.std_error + 1e-15);
}

fn spd_strategy(k: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (proptest::collection::vec(-1.0f64..1.0, k * k), 0.05f64..2.0).prop_map(move |(v, ridge)| {
        let b = DMatrix::from_vec(k, k, v);
        &b * b.transpose() + DMatrix::identity(k, k) * ridge
    })
}

fn gaussian_strategy(k: usize) -> impl Strategy<Value = Gaussian> {
    (proptest::collection::vec(-3.0f64..3.0, k), spd_strategy(k))
        .prop_map(|(m, c)| Gaussian::new(DVector::from_vec(m), c).unwrap())
}

proptest! {
    #[test]
    fn kl_is_non_negative((p, q) in (1usize..5).prop_flat_map(|k| (gaussian_strategy(k), gaussian_strategy(k)))) {
        prop_assert!(kl_gauss(&p, &q).unwrap() >= -1e-12);
        prop_assert!(kl_gauss(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn entropy_scales_with_covariance(p in (1usize..5).prop_flat_map(gaussian_strategy), c in 0.01f64..100.0) {
        let k = p.dim() as f64;
        let diff = entropy(&p.scale_cov(c).unwrap()) - entropy(&p);
        prop_assert!((diff - 0.5 * k * c.ln()).abs() < 1e-9);
    }

    #[test]
    fn log_det_is_multiplicative_on_commuting_pairs(a in (1usize..6).prop_flat_map(spd_strategy), c0 in 0.1f64..2.0, c1 in 0.0f64..2.0) {
        let k = a.nrows();
        // polynomials of one SPD matrix with positive coefficients commute and stay SPD
        let b = DMatrix::identity(k, k) * c0 + &a * c1 + &a * &a;
        let ab = &a * &b;
        let ab = (&ab + ab.transpose()) * 0.5;
        let lhs = log_det(&ab).unwrap();
        let rhs = log_det(&a).unwrap() + log_det(&b).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
    }
}
