mod common;

use common::{mean_and_sd, random_stable_model, rng};
use lsid::discretize::c2d_shift;
use lsid::experiment::reference_system;
use lsid::sampler::{build_trace, gaussian_input, lebesgue_sample, simulate_sde, CensoringRule};
use lsid::smoothing::particle::systematic_resample;
use lsid::smoothing::{
    estep_moments, interval_likelihood, kalman_smoother_moments, particle_filter, particle_smoother,
    truncated_gaussian_mean, CensoredOutput, FilterConfig, GaussianOutput, MomentSet,
};
use lsid::ShiftModel;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn phi(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
    }
}

/// Filtered means of a scalar model by point-mass propagation on a dense grid.
fn grid_filter(model: &ShiftModel, p1: f64, u: &[f64], a: &[f64], b: &[f64], eps: f64) -> Vec<(f64, f64)> {
    let (lo, hi, points) = (-5.0, 5.0, 2001);
    let h = (hi - lo) / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|i| lo + i as f64 * h).collect();
    let (ad, bd, qd, c) = (model.ad[(0, 0)], model.bd[0], model.qd[(0, 0)], model.c[0]);
    let gauss = |x: f64, m: f64, v: f64| (-(x - m) * (x - m) / (2.0 * v)).exp();

    let mut density: Vec<f64> = grid.iter().map(|&x| gauss(x, 0.0, p1)).collect();
    let mut out = Vec::with_capacity(u.len());
    for k in 0..u.len() {
        if k > 0 {
            let prev = density.clone();
            for (i, d) in density.iter_mut().enumerate() {
                *d = grid.iter().zip(&prev).map(|(&xp, &w)| w * gauss(grid[i], ad * xp + bd * u[k - 1], qd)).sum();
            }
        }
        for (d, &x) in density.iter_mut().zip(&grid) {
            *d *= phi((b[k] - c * x) / eps) - phi((a[k] - c * x) / eps);
        }
        let total: f64 = density.iter().sum();
        density.iter_mut().for_each(|d| *d /= total);
        let mean: f64 = density.iter().zip(&grid).map(|(d, x)| d * x).sum();
        let var: f64 = density.iter().zip(&grid).map(|(d, x)| d * (x - mean) * (x - mean)).sum();
        out.push((mean, var));
    }
    out
}

#[test]
fn particle_filter_means_match_grid_oracle() {
    let truth = reference_system();
    let (delta, tau, eps, steps) = (0.05, 0.3, 0.1, 50);
    let u = gaussian_input(steps, 1.0, 31);
    let z = simulate_sde(&truth, &u, delta, 32).unwrap().z;
    let ev = lebesgue_sample(&z, tau, delta).unwrap();
    let trace = build_trace(&ev, steps, CensoringRule::Exact).unwrap();
    let shift = c2d_shift(&truth, delta).unwrap();
    let obs = CensoredOutput::new(&trace, eps);
    let cfg = FilterConfig { particles: 2000, ess_threshold: 0.5, seed: 4 };
    let filtered = particle_filter(&shift, &truth.initial_state(), &u, &obs, &cfg).unwrap();
    let oracle = grid_filter(&shift, truth.p1[(0, 0)], &u, &trace.a, &trace.b, eps);

    for (k, (set, &(mean, var))) in filtered.sets.iter().zip(&oracle).enumerate() {
        let se = (var / set.effective_sample_size()).sqrt();
        let got = set.mean()[0];
        assert!((got - mean).abs() <= 3.0 * se + 1e-4, "step {k}: {got} vs {mean} (se {se})");
    }
}

/// Smoothed Γ's by conditioning the joint Gaussian of `(x_1..x_{N+1}, y_1..y_N)`.
fn dense_moments(model: &ShiftModel, mu1: &DVector<f64>, p1: &DMatrix<f64>, u: &[f64], y: &[f64], r: f64) -> (Vec<DVector<f64>>, DMatrix<f64>, f64) {
    let n = model.ad.nrows();
    let steps = u.len();
    let states = steps + 1;
    let mut means = vec![mu1.clone()];
    let mut covs = vec![p1.clone()];
    for k in 0..steps {
        means.push(&model.ad * &means[k] + &model.bd * u[k]);
        covs.push(&model.ad * &covs[k] * model.ad.transpose() + &model.qd);
    }
    let mut sxx = DMatrix::zeros(n * states, n * states);
    for (i, cov) in covs.iter().enumerate() {
        let mut block = cov.clone();
        for j in i..states {
            sxx.view_mut((j * n, i * n), (n, n)).copy_from(&block);
            sxx.view_mut((i * n, j * n), (n, n)).copy_from(&block.transpose());
            block = &model.ad * block;
        }
    }
    let mut h = DMatrix::zeros(steps, n * states);
    for k in 0..steps {
        h.view_mut((k, k * n), (1, n)).copy_from(&model.c);
    }
    let mut mx = DVector::zeros(n * states);
    for (i, m) in means.iter().enumerate() {
        mx.rows_mut(i * n, n).copy_from(m);
    }
    let my = &h * &mx + DVector::from_iterator(steps, u.iter().map(|v| model.d * v));
    let syy = &h * &sxx * h.transpose() + DMatrix::identity(steps, steps) * r;
    let sxy = &sxx * h.transpose();
    let yv = DVector::from_column_slice(y);
    let inv = syy.clone().try_inverse().unwrap();
    let post_mean = &mx + &sxy * &inv * (&yv - &my);
    let post_cov = &sxx - &sxy * &inv * sxy.transpose();
    let resid = &yv - &my;
    let log_lik = -0.5 * ((resid.transpose() * &inv * &resid)[0] + syy.determinant().ln() + steps as f64 * (2.0 * std::f64::consts::PI).ln());
    let blocks = (0..states).map(|i| post_mean.rows(i * n, n).into_owned()).collect();
    (blocks, post_cov, log_lik)
}

#[test]
fn kalman_moments_match_dense_conditioning() {
    let mut r = rng(77);
    for case in 0..4 {
        let n = 1 + case % 2;
        let model = random_stable_model(n, &mut r);
        let (delta, steps, noise) = (0.1, 5, 0.03);
        let u = gaussian_input(steps, 1.0, 40 + case as u64);
        let y: Vec<f64> = (0..steps).map(|_| r.random_range(-1.0..1.0)).collect();
        let shift = c2d_shift(&model, delta).unwrap();
        let ks = kalman_smoother_moments(&shift, &model.initial_state(), &u, &y, noise).unwrap();
        let (means, cov, log_lik) = dense_moments(&shift, &model.mu1, &model.p1, &u, &y, noise);

        let second = |i: usize, j: usize| cov.view((i * n, j * n), (n, n)).into_owned() + &means[i] * means[j].transpose();
        let (mut gxx, mut gqq, mut gxq) = (DMatrix::zeros(n, n), DMatrix::zeros(n, n), DMatrix::zeros(n, n));
        let mut gxz = DVector::zeros(n);
        for k in 0..steps {
            gxx += second(k, k);
            gqq += second(k + 1, k + 1);
            gxq += second(k, k + 1);
            gxz += &means[k] * y[k];
        }
        let m = &ks.moments;
        let close = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).norm() <= 1e-8 * b.norm();
        assert!(close(&m.gxx, &gxx) && close(&m.gqq, &gqq) && close(&m.gxq, &gxq), "case {case}");
        assert!((&m.gxz - &gxz).norm() <= 1e-8 * gxz.norm());
        assert!((ks.log_likelihood - log_lik).abs() <= 1e-8 * log_lik.abs().max(1.0));
    }
}

#[test]
fn systematic_resampling_is_unbiased_with_bounded_counts() {
    let mut r = rng(12);
    let m = 50;
    let raw: Vec<f64> = (0..m).map(|_| r.random_range(0.0f64..1.0).powi(3)).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let values: Vec<f64> = (0..m).map(|i| (i as f64 * 0.37).sin()).collect();
    let target: f64 = weights.iter().zip(&values).map(|(w, v)| w * v).sum();

    let means: Vec<f64> = (0..200)
        .map(|_| {
            let idx = systematic_resample(&weights, &mut r);
            let mut counts = vec![0usize; m];
            idx.iter().for_each(|&i| counts[i] += 1);
            for (c, w) in counts.iter().zip(&weights) {
                let expected = w * m as f64;
                assert!((*c as f64) >= expected.floor() - 1e-9 && (*c as f64) <= expected.ceil() + 1e-9);
            }
            idx.iter().map(|&i| values[i]).sum::<f64>() / m as f64
        })
        .collect();
    let (mean, sd) = mean_and_sd(&means);
    assert!((mean - target).abs() <= 3.0 * sd / (means.len() as f64).sqrt() + 1e-12);
}

fn moment_error(estimate: &MomentSet, exact: &MomentSet) -> f64 {
    (&estimate.gxx - &exact.gxx).norm() + (&estimate.gxq - &exact.gxq).norm() + (&estimate.gxz - &exact.gxz).norm()
}

#[test]
fn particle_moments_approach_kalman_as_particles_grow() {
    let truth = reference_system();
    let (delta, steps, noise) = (0.05, 60, 0.05f64);
    let u = gaussian_input(steps, 1.0, 70);
    let z = simulate_sde(&truth, &u, delta, 71).unwrap().z;
    let mut r = rng(72);
    let y: Vec<f64> = z.iter().map(|z| z + noise.sqrt() * r.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let shift = c2d_shift(&truth, delta).unwrap();
    let prior = truth.initial_state();
    let exact = kalman_smoother_moments(&shift, &prior, &u, &y, noise).unwrap().moments;
    let obs = GaussianOutput { y: &y, r: noise };
    let error = |particles: usize| {
        (0..5u64)
            .map(|seed| {
                let cfg = FilterConfig { particles, ess_threshold: 0.5, seed };
                let filtered = particle_filter(&shift, &prior, &u, &obs, &cfg).unwrap();
                let smoothed = particle_smoother(&filtered.sets, &shift, &u).unwrap();
                moment_error(&estep_moments(&smoothed, &u, &obs, &shift).unwrap(), &exact)
            })
            .sum::<f64>()
    };
    let (coarse, fine) = (error(100), error(1000));
    assert!(fine < coarse, "M=1000 error {fine} not below M=100 error {coarse}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn truncated_mean_stays_inside(m in -10.0f64..10.0, eps in 1e-3f64..3.0, a in -10.0f64..10.0, width in 1e-3f64..5.0) {
        let b = a + width;
        let t = truncated_gaussian_mean(m, eps, a, b);
        prop_assert!(t >= a && t <= b, "{} not in [{}, {}]", t, a, b);
        let up = truncated_gaussian_mean(m, eps, a, f64::INFINITY);
        prop_assert!(up >= a);
        let down = truncated_gaussian_mean(m, eps, f64::NEG_INFINITY, b);
        prop_assert!(down <= b);
    }

    #[test]
    fn interval_likelihood_is_monotone_in_its_bounds(m in -3.0f64..3.0, eps in 0.01f64..2.0, a in -3.0f64..3.0, w in 0.01f64..2.0, extra in 0.0f64..2.0) {
        let base = interval_likelihood(m, eps, a, a + w);
        prop_assert!(interval_likelihood(m, eps, a, a + w + extra) >= base);
        prop_assert!(interval_likelihood(m, eps, a - extra, a + w) >= base);
        prop_assert!(base <= 1.0);
    }
}
