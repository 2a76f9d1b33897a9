mod common;

use approx::assert_relative_eq;
use common::{quadrature_qd, random_stable_model, rel_frobenius, rng, taylor_exp};
use lsid::discretize::{c2d_shift, incremental_to_shift, matrix_exponential, shift_to_incremental};
use lsid::experiment::reference_system;
use lsid::ContinuousModel;
use nalgebra::{DMatrix, DVector, RowDVector};
use proptest::prelude::*;

fn model_from(a: DMatrix<f64>, q: DMatrix<f64>) -> ContinuousModel {
    let n = a.nrows();
    ContinuousModel {
        a,
        b: DVector::from_element(n, 1.0),
        c: RowDVector::from_element(n, 1.0),
        d: 0.0,
        q,
        mu1: DVector::zeros(n),
        p1: DMatrix::zeros(n, n),
    }
}

#[test]
fn exponential_matches_taylor_oracle() {
    let mut r = rng(1);
    for n in 1..=4 {
        let m = common::random_matrix(n, n, &mut r) * 3.0;
        let e = matrix_exponential(&m).unwrap();
        assert!(rel_frobenius(&e, &taylor_exp(&m)) < 1e-12);
    }
}

#[test]
fn qd_matches_quadrature_for_marginally_stable_dynamics() {
    let integrator = model_from(DMatrix::zeros(2, 2), DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]));
    let double_integrator = model_from(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]), DMatrix::identity(2, 2));
    let oscillator = model_from(DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -2.0, 0.0]), DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
    for model in [integrator, double_integrator, oscillator] {
        for delta in [0.01, 0.1, 1.0] {
            let qd = c2d_shift(&model, delta).unwrap().qd;
            assert!(rel_frobenius(&qd, &quadrature_qd(&model.a, &model.q, delta)) <= 1e-10);
        }
    }
}

#[test]
fn bd_matches_quadrature_of_the_input_kernel() {
    let mut r = rng(2);
    let rule = common::gauss_legendre(20);
    for n in 1..=3 {
        let model = random_stable_model(n, &mut r);
        let delta = 0.2;
        let mut integral = DVector::zeros(n);
        for &(x, w) in &rule {
            let s = 0.5 * delta * (x + 1.0);
            integral += taylor_exp(&(&model.a * s)) * &model.b * (0.5 * delta * w);
        }
        let bd = c2d_shift(&model, delta).unwrap().bd;
        assert!((&bd - &integral).norm() / integral.norm() < 1e-12);
    }
}

#[test]
fn reference_model_at_fine_grid() {
    let shift = c2d_shift(&reference_system(), 0.01).unwrap();
    assert_relative_eq!(shift.ad[(0, 0)], 0.990_049_83, epsilon = 1e-8);
    assert_relative_eq!(shift.bd[0], 0.006_965_12, epsilon = 1e-8);
    assert_relative_eq!(shift.qd[(0, 0)], 0.004_950_33, epsilon = 1e-8);

    let inc = shift_to_incremental(&shift);
    assert_relative_eq!(inc.ain[(0, 0)], -0.995_017, epsilon = 1e-6);
    assert_relative_eq!(inc.qin[(0, 0)], 0.495_033, epsilon = 1e-6);
    let back = incremental_to_shift(&inc);
    assert!((back.ad[(0, 0)] - shift.ad[(0, 0)]).abs() <= 1e-14);
    assert!((back.bd[0] - shift.bd[0]).abs() <= 1e-14);
    assert!((back.qd[(0, 0)] - shift.qd[(0, 0)]).abs() <= 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qd_is_symmetric_psd(seed in 0u64..10_000, n in 1usize..4, delta in 1e-3f64..1.0, rank in 0usize..3) {
        let mut r = rng(seed);
        let mut model = random_stable_model(n, &mut r);
        let l = common::random_matrix(n, rank.min(n), &mut r);
        model.q = &l * l.transpose();
        let qd = c2d_shift(&model, delta).unwrap().qd;
        prop_assert_eq!(qd.clone(), qd.transpose());
        let min = qd.symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-14 * qd.norm(), "min eigenvalue {}", min);
    }

    #[test]
    fn shift_incremental_round_trip(seed in 0u64..10_000, n in 1usize..4, delta in 1e-3f64..0.5) {
        let mut r = rng(seed);
        let shift = c2d_shift(&random_stable_model(n, &mut r), delta).unwrap();
        let back = incremental_to_shift(&shift_to_incremental(&shift));
        prop_assert!((&back.ad - &shift.ad).amax() <= 1e-14);
        prop_assert!((&back.bd - &shift.bd).amax() <= 1e-14);
        prop_assert!((&back.qd - &shift.qd).amax() <= 1e-14);
    }
}
