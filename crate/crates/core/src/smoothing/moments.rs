//! Sufficient statistics of the EM surrogate: sums over the record of
//! smoothed first and second moments of `(x_k, x_{k+1}, u_k, z_k)`.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use super::particle::{OutputModel, SmoothedEnsemble};
use crate::linalg::symmetrize;
use crate::model::ShiftModel;
use crate::{Error, Result};

/// Γ sums over `k = 1..N`, plus their delta-operator counterparts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub gxx: DMatrix<f64>,
    pub gqq: DMatrix<f64>,
    pub gxq: DMatrix<f64>,
    pub gux: RowDVector<f64>,
    pub guq: RowDVector<f64>,
    pub gxz: DVector<f64>,
    pub guz: f64,
    pub guu: f64,
    pub gxd: DMatrix<f64>,
    pub gud: RowDVector<f64>,
    pub gdd: DMatrix<f64>,
    /// Number of summed steps `N`.
    pub count: usize,
    pub delta: f64,
}

impl MomentSet {
    pub fn state_dim(&self) -> usize {
        self.gxx.nrows()
    }

    /// Builds the set from the shift-form Γ's and fills in the delta forms.
    #[allow(clippy::too_many_arguments)]
    pub fn from_shift_moments(
        gxx: DMatrix<f64>,
        gqq: DMatrix<f64>,
        gxq: DMatrix<f64>,
        gux: RowDVector<f64>,
        guq: RowDVector<f64>,
        gxz: DVector<f64>,
        guz: f64,
        guu: f64,
        count: usize,
        delta: f64,
    ) -> Self {
        let gxx = symmetrize(&gxx);
        let gqq = symmetrize(&gqq);
        let gxd = (&gxq - &gxx) / delta;
        let gud = (&guq - &gux) / delta;
        let gdd = symmetrize(&((&gqq - &gxq - gxq.transpose() + &gxx) / (delta * delta)));
        MomentSet { gxx, gqq, gxq, gux, guq, gxz, guz, guu, gxd, gud, gdd, count, delta }
    }

    /// Moments of a fully known trajectory: `states` has `N+1` rows `x_1..x_{N+1}`,
    /// `u` and `z` have `N` entries.
    pub fn from_trajectory(states: &DMatrix<f64>, u: &[f64], z: &[f64], delta: f64) -> Result<Self> {
        let steps = u.len();
        if states.nrows() != steps + 1 || z.len() != steps {
            return Err(Error::Dimension(format!(
                "trajectory has {} states, {} inputs and {} outputs",
                states.nrows(),
                steps,
                z.len()
            )));
        }
        let n = states.ncols();
        let mut acc = Accumulator::new(n);
        for k in 0..steps {
            let x = states.row(k).transpose();
            let next = states.row(k + 1).transpose();
            acc.add(&x, &(&x * x.transpose()), &(&next * next.transpose()), &(&x * next.transpose()), &next, &(&x * z[k]), z[k], u[k]);
        }
        Ok(acc.finish(steps, delta))
    }
}

struct Accumulator {
    gxx: DMatrix<f64>,
    gqq: DMatrix<f64>,
    gxq: DMatrix<f64>,
    gux: RowDVector<f64>,
    guq: RowDVector<f64>,
    gxz: DVector<f64>,
    guz: f64,
    guu: f64,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Accumulator {
            gxx: DMatrix::zeros(n, n),
            gqq: DMatrix::zeros(n, n),
            gxq: DMatrix::zeros(n, n),
            gux: RowDVector::zeros(n),
            guq: RowDVector::zeros(n),
            gxz: DVector::zeros(n),
            guz: 0.0,
            guu: 0.0,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn add(
        &mut self,
        mean: &DVector<f64>,
        second: &DMatrix<f64>,
        next_second: &DMatrix<f64>,
        cross: &DMatrix<f64>,
        next_mean: &DVector<f64>,
        xz: &DVector<f64>,
        z: f64,
        u: f64,
    ) {
        self.gxx += second;
        self.gqq += next_second;
        self.gxq += cross;
        self.gux += mean.transpose() * u;
        self.guq += next_mean.transpose() * u;
        self.gxz += xz;
        self.guz += u * z;
        self.guu += u * u;
    }

    fn finish(self, count: usize, delta: f64) -> MomentSet {
        MomentSet::from_shift_moments(
            self.gxx, self.gqq, self.gxq, self.gux, self.guq, self.gxz, self.guz, self.guu, count, delta,
        )
    }
}

/// Smoothed moments of one grid step.
#[derive(Clone, Debug)]
pub(crate) struct StepMoments {
    pub mean: DVector<f64>,
    /// `E{x_k x_kᵀ}`.
    pub second: DMatrix<f64>,
    /// `E{x_k z_k}`.
    pub xz: DVector<f64>,
    /// `E{z_k}`.
    pub z: f64,
}

/// Sums per-step moments into Γ's. `cross[k] = E{x_k x_{k+1}ᵀ}` for the first
/// `N−1` steps; the unobserved `x_{N+1}` is predicted through `model`.
pub(crate) fn assemble(steps: &[StepMoments], cross: &[DMatrix<f64>], u: &[f64], model: &ShiftModel) -> MomentSet {
    let count = steps.len();
    let n = model.ad.nrows();
    let mut acc = Accumulator::new(n);
    if count == 0 {
        return acc.finish(0, model.delta);
    }
    let last = &steps[count - 1];
    let ul = u[count - 1];
    let (ad, bd) = (&model.ad, &model.bd);
    let terminal_mean = ad * &last.mean + bd * ul;
    let drive = ad * &last.mean * bd.transpose() * ul;
    let terminal_second =
        symmetrize(&(ad * &last.second * ad.transpose() + &drive + drive.transpose() + bd * bd.transpose() * (ul * ul) + &model.qd));
    let terminal_cross = &last.second * ad.transpose() + &last.mean * bd.transpose() * ul;

    for k in 0..count {
        let s = &steps[k];
        let (next_mean, next_second, xq) = if k + 1 < count {
            (&steps[k + 1].mean, &steps[k + 1].second, &cross[k])
        } else {
            (&terminal_mean, &terminal_second, &terminal_cross)
        };
        acc.add(&s.mean, &s.second, next_second, xq, next_mean, &s.xz, s.z, u[k]);
    }
    acc.finish(count, model.delta)
}

/// Γ's from a smoothed particle ensemble. `z` moments use the per-particle
/// conditional mean `E{z_k | x_k, y_k}` supplied by `obs`.
pub fn estep_moments(
    ensemble: &SmoothedEnsemble,
    u: &[f64],
    obs: &impl OutputModel,
    model: &ShiftModel,
) -> Result<MomentSet> {
    let count = ensemble.len();
    if u.len() < count || obs.len() < count {
        return Err(Error::Dimension(format!(
            "ensemble has {count} steps, input {}, output {}",
            u.len(),
            obs.len()
        )));
    }
    let n = model.ad.nrows();
    let steps: Vec<StepMoments> = (0..count)
        .map(|k| {
            let x = &ensemble.particles[k];
            let w = &ensemble.weights[k];
            let mut mean = DVector::zeros(n);
            let mut second = DMatrix::zeros(n, n);
            let mut xz = DVector::zeros(n);
            let mut z = 0.0;
            for (i, col) in x.column_iter().enumerate() {
                let wi = w[i];
                if wi == 0.0 {
                    continue;
                }
                let predicted = (&model.c * col)[0] + model.d * u[k];
                let zi = obs.output_mean(k, predicted);
                mean += col * wi;
                second += col * col.transpose() * wi;
                xz += col * (wi * zi);
                z += wi * zi;
            }
            StepMoments { mean, second: symmetrize(&second), xz, z }
        })
        .collect();
    Ok(assemble(&steps, &ensemble.cross_moments, u, model))
}
