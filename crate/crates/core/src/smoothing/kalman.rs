//! Kalman filter and Rauch–Tung–Striebel smoother with lag-one covariances,
//! treating the held output as a direct Gaussian measurement.

use nalgebra::{DMatrix, DVector};

use super::moments::{assemble, MomentSet, StepMoments};
use crate::linalg::{all_finite, clip_eigenvalues, min_eigenvalue, symmetrize};
use crate::model::{InitialState, ShiftModel};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct KalmanSmoother {
    pub moments: MomentSet,
    /// Exact `log p(y_{1:N})` from the innovations.
    pub log_likelihood: f64,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    /// `Cov(x_k, x_{k+1} | y_{1:N})` for the first `N−1` steps.
    pub lag_one: Vec<DMatrix<f64>>,
}

/// Symmetrizes `p` and clips tiny negative eigenvalues; fails if they are not tiny.
fn condition_covariance(p: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if !all_finite(&p) {
        return Err(Error::Numerical(format!("{what} became non-finite")));
    }
    let p = symmetrize(&p);
    let min = min_eigenvalue(&p);
    if min < 0.0 {
        if min < -1e-8 * p.norm().max(1e-300) {
            return Err(Error::Numerical(format!("{what} lost positive semidefiniteness ({min:.3e})")));
        }
        return Ok(clip_eigenvalues(&p, 0.0));
    }
    Ok(p)
}

/// `a · b⁻¹` for symmetric PSD `b`, falling back to the pseudo-inverse when `b` is singular.
fn right_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    match b.clone().cholesky() {
        Some(chol) => chol.solve(&a.transpose()).transpose(),
        None => {
            let pinv = b.clone().pseudo_inverse(1e-14 * b.norm().max(1e-300)).unwrap_or_else(|_| DMatrix::zeros(b.nrows(), b.ncols()));
            a * pinv
        }
    }
}

/// Exact E-step for `y_k = C x_k + D u_k + v_k`, `v_k ~ N(0, r)`.
pub fn kalman_smoother_moments(
    model: &ShiftModel,
    prior: &InitialState,
    u: &[f64],
    y: &[f64],
    r: f64,
) -> Result<KalmanSmoother> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!("measurement variance must be positive, got {r}")));
    }
    if u.len() != y.len() {
        return Err(Error::Dimension(format!("input has {} samples, output has {}", u.len(), y.len())));
    }
    let steps = y.len();
    let n = model.ad.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let ct = model.c.transpose();

    let mut filtered_m = Vec::with_capacity(steps);
    let mut filtered_p = Vec::with_capacity(steps);
    let mut predicted_p = Vec::with_capacity(steps);
    let mut predicted_m = Vec::with_capacity(steps);
    let mut log_likelihood = 0.0;
    let mut m = prior.mean.clone();
    let mut p = condition_covariance(prior.cov.clone(), "prior covariance")?;

    for k in 0..steps {
        if k > 0 {
            m = &model.ad * &m + &model.bd * u[k - 1];
            p = condition_covariance(&model.ad * &p * model.ad.transpose() + &model.qd, "predicted covariance")?;
        }
        predicted_m.push(m.clone());
        predicted_p.push(p.clone());

        let s = (&model.c * &p * &ct)[0] + r;
        let innovation = y[k] - (&model.c * &m)[0] - model.d * u[k];
        log_likelihood -= 0.5 * ((2.0 * std::f64::consts::PI * s).ln() + innovation * innovation / s);
        let gain = &p * &ct / s;
        m = &m + &gain * innovation;
        let ikc = &ident - &gain * &model.c;
        p = condition_covariance(&ikc * &p * ikc.transpose() + &gain * gain.transpose() * r, "filtered covariance")?;
        filtered_m.push(m.clone());
        filtered_p.push(p.clone());
    }

    let mut means = filtered_m.clone();
    let mut covariances = filtered_p.clone();
    let mut lag_one = vec![DMatrix::zeros(n, n); steps.saturating_sub(1)];
    for k in (0..steps.saturating_sub(1)).rev() {
        let gain = right_solve(&(&filtered_p[k] * model.ad.transpose()), &predicted_p[k + 1]);
        means[k] = &filtered_m[k] + &gain * (&means[k + 1] - &predicted_m[k + 1]);
        covariances[k] = condition_covariance(
            &filtered_p[k] + &gain * (&covariances[k + 1] - &predicted_p[k + 1]) * gain.transpose(),
            "smoothed covariance",
        )?;
        lag_one[k] = &gain * &covariances[k + 1];
    }

    let step_moments: Vec<StepMoments> = (0..steps)
        .map(|k| {
            let second = symmetrize(&(&covariances[k] + &means[k] * means[k].transpose()));
            StepMoments { xz: &means[k] * y[k], z: y[k], mean: means[k].clone(), second }
        })
        .collect();
    let cross: Vec<DMatrix<f64>> =
        (0..lag_one.len()).map(|k| &lag_one[k] + &means[k] * means[k + 1].transpose()).collect();
    let moments = assemble(&step_moments, &cross, u, model);
    Ok(KalmanSmoother { moments, log_likelihood, means, covariances, lag_one })
}
