//! Bootstrap particle filter and forward-filtering backward-smoothing (FFBSm)
//! reweighting, with pairwise weights for the lag-one cross moments.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::normal::{exact_log_interval_likelihood, log_interval_likelihood, truncated_gaussian_mean, PROBABILITY_FLOOR};
use crate::linalg::{log_sum_exp, symmetric_sqrt};
use crate::model::{InitialState, ShiftModel};
use crate::sampler::QuantizedTrace;
use crate::{Error, Result};

/// Observation density of the output given the predicted noiseless output
/// `C x_k + D u_k`, plus the conditional mean of `z_k` it implies.
#[allow(clippy::len_without_is_empty)]
pub trait OutputModel: Sync {
    fn len(&self) -> usize;

    fn log_likelihood(&self, k: usize, predicted: f64) -> f64;

    /// `E{z_k | x_k, y_k}` for a particle whose predicted output is `predicted`.
    fn output_mean(&self, k: usize, predicted: f64) -> f64;

    /// True if `log_likelihood` returned its lower clamp.
    fn is_floor(&self, _log_likelihood: f64) -> bool {
        false
    }

    /// `log_likelihood` without the lower clamp, used when every particle hits it.
    fn exact_log_likelihood(&self, k: usize, predicted: f64) -> f64 {
        self.log_likelihood(k, predicted)
    }
}

/// `z_k = C x_k + D u_k + v_k`, `v_k ~ N(0, ε²)`, known only to lie in `[a_k, b_k]`.
#[derive(Clone, Copy, Debug)]
pub struct CensoredOutput<'a> {
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub eps: f64,
}

impl<'a> CensoredOutput<'a> {
    pub fn new(trace: &'a QuantizedTrace, eps: f64) -> Self {
        CensoredOutput { a: &trace.a, b: &trace.b, eps }
    }
}

impl OutputModel for CensoredOutput<'_> {
    fn len(&self) -> usize {
        self.a.len()
    }

    fn log_likelihood(&self, k: usize, predicted: f64) -> f64 {
        log_interval_likelihood(predicted, self.eps, self.a[k], self.b[k])
    }

    fn output_mean(&self, k: usize, predicted: f64) -> f64 {
        truncated_gaussian_mean(predicted, self.eps, self.a[k], self.b[k])
    }

    fn is_floor(&self, log_likelihood: f64) -> bool {
        log_likelihood <= PROBABILITY_FLOOR.ln()
    }

    fn exact_log_likelihood(&self, k: usize, predicted: f64) -> f64 {
        exact_log_interval_likelihood(predicted, self.eps, self.a[k], self.b[k])
    }
}

/// Direct measurement `y_k = C x_k + D u_k + v_k`, `v_k ~ N(0, r)`; `z_k ≡ y_k`.
#[derive(Clone, Copy, Debug)]
pub struct GaussianOutput<'a> {
    pub y: &'a [f64],
    pub r: f64,
}

impl OutputModel for GaussianOutput<'_> {
    fn len(&self) -> usize {
        self.y.len()
    }

    fn log_likelihood(&self, k: usize, predicted: f64) -> f64 {
        let e = self.y[k] - predicted;
        -0.5 * (e * e / self.r + (2.0 * std::f64::consts::PI * self.r).ln())
    }

    fn output_mean(&self, k: usize, _predicted: f64) -> f64 {
        self.y[k]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FilterConfig {
    pub particles: usize,
    /// Resample when ESS < `ess_threshold · M`.
    pub ess_threshold: f64,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { particles: 1000, ess_threshold: 0.5, seed: 0 }
    }
}

/// Weighted particles at one time step.
#[derive(Clone, Debug)]
pub struct ParticleSet {
    /// `n × M`, one particle per column.
    pub particles: DMatrix<f64>,
    /// Normalized log-weights (`log Σ exp = 0`).
    pub log_weights: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(&self.weights)
    }

    pub fn mean(&self) -> DVector<f64> {
        &self.particles * DVector::from_column_slice(&self.weights)
    }
}

#[derive(Clone, Debug)]
pub struct FilterOutput {
    pub sets: Vec<ParticleSet>,
    /// `Σ_k log Σ_i w̄_{k−1}^{(i)} p(y_k | x_k^{(i)})`.
    pub log_likelihood: f64,
    pub resamples: usize,
    /// Steps where every clamped likelihood hit the floor and the exact tail was used instead.
    pub floor_recoveries: usize,
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Systematic resampling: one uniform offset, `M` evenly spaced pointers.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let m = weights.len();
    let step = 1.0 / m as f64;
    let mut pointer = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(m);
    let mut cumulative = weights[0];
    let mut i = 0;
    for _ in 0..m {
        while pointer > cumulative && i + 1 < m {
            i += 1;
            cumulative += weights[i];
        }
        out.push(i);
        pointer += step;
    }
    out
}

fn normalize(unnormalized: Vec<f64>) -> (Vec<f64>, Vec<f64>, f64) {
    let lse = log_sum_exp(unnormalized.iter().copied());
    let log_weights: Vec<f64> = unnormalized.iter().map(|l| l - lse).collect();
    let mut weights: Vec<f64> = log_weights.iter().map(|l| l.exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (log_weights, weights, lse)
}

fn standard_normal_matrix(n: usize, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.sample(StandardNormal))
}

/// Bootstrap (transition-proposal) particle filter.
pub fn particle_filter(
    model: &ShiftModel,
    prior: &InitialState,
    u: &[f64],
    obs: &impl OutputModel,
    cfg: &FilterConfig,
) -> Result<FilterOutput> {
    let n = model.ad.nrows();
    let m = cfg.particles;
    if m < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 particles, got {m}")));
    }
    if u.len() != obs.len() {
        return Err(Error::Dimension(format!("input has {} samples, output has {}", u.len(), obs.len())));
    }
    let noise = symmetric_sqrt(&model.qd, "Qd")?;
    let init = symmetric_sqrt(&prior.cov, "P1")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut x = init * standard_normal_matrix(n, m, &mut rng);
    for mut col in x.column_iter_mut() {
        col += &prior.mean;
    }

    let mut sets: Vec<ParticleSet> = Vec::with_capacity(u.len());
    let mut log_likelihood = 0.0;
    let mut resamples = 0;
    let mut floor_recoveries = 0;
    let uniform = -(m as f64).ln();

    for k in 0..u.len() {
        let base = match sets.last() {
            None => vec![uniform; m],
            Some(prev) => {
                let resample = prev.effective_sample_size() < cfg.ess_threshold * m as f64;
                let (ancestors, base) = if resample {
                    resamples += 1;
                    (systematic_resample(&prev.weights, &mut rng), vec![uniform; m])
                } else {
                    ((0..m).collect(), prev.log_weights.clone())
                };
                let selected = DMatrix::from_fn(n, m, |r, c| prev.particles[(r, ancestors[c])]);
                let mut next = &model.ad * selected + &noise * standard_normal_matrix(n, m, &mut rng);
                let drive = &model.bd * u[k - 1];
                for mut col in next.column_iter_mut() {
                    col += &drive;
                }
                x = next;
                base
            }
        };

        let predicted = &model.c * &x;
        let mut ll: Vec<f64> = predicted.iter().map(|&p| obs.log_likelihood(k, p + model.d * u[k])).collect();
        if ll.iter().all(|&l| obs.is_floor(l)) {
            ll = predicted.iter().map(|&p| obs.exact_log_likelihood(k, p + model.d * u[k])).collect();
            if !ll.iter().any(|l| l.is_finite()) {
                return Err(Error::WeightCollapse { step: k });
            }
            log::debug!("step {k}: all particles below the likelihood floor, using exact tails");
            floor_recoveries += 1;
        }
        let unnormalized: Vec<f64> = base.iter().zip(&ll).map(|(b, l)| b + l).collect();
        let (log_weights, weights, lse) = normalize(unnormalized);
        log_likelihood += lse;
        sets.push(ParticleSet { particles: x.clone(), log_weights, weights });
    }
    Ok(FilterOutput { sets, log_likelihood, resamples, floor_recoveries })
}

/// Smoothed marginals over the filter particles plus lag-one cross moments.
#[derive(Clone, Debug)]
pub struct SmoothedEnsemble {
    /// `n × M` per step (the filter particles).
    pub particles: Vec<DMatrix<f64>>,
    /// `w_{k|N}^{(i)}` per step.
    pub weights: Vec<Vec<f64>>,
    /// `E{x_k x_{k+1}ᵀ | y_{1:N}}` for `k = 0..N−2`.
    pub cross_moments: Vec<DMatrix<f64>>,
}

impl SmoothedEnsemble {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mean(&self, k: usize) -> DVector<f64> {
        &self.particles[k] * DVector::from_column_slice(&self.weights[k])
    }
}

/// Whitened transition geometry shared by every step.
struct TransitionKernel {
    whiten: DMatrix<f64>,
}

impl TransitionKernel {
    fn new(model: &ShiftModel) -> Result<Self> {
        let chol = model.qd.clone().cholesky().ok_or(Error::SingularTransition)?;
        let whiten = chol.l().try_inverse().ok_or(Error::SingularTransition)?;
        if !whiten.iter().all(|x| x.is_finite()) {
            return Err(Error::SingularTransition);
        }
        Ok(TransitionKernel { whiten })
    }

    /// Row-major `M_next × M` matrix of `W_k^{(i,j)}` stored at `[j * M + i]`.
    fn pairwise(
        &self,
        model: &ShiftModel,
        current: &ParticleSet,
        next: &DMatrix<f64>,
        next_smoothed: &[f64],
        uk: f64,
    ) -> Vec<f64> {
        let m = current.len();
        let mut predicted = &model.ad * &current.particles;
        let drive = &model.bd * uk;
        for mut col in predicted.column_iter_mut() {
            col += &drive;
        }
        let pw = &self.whiten * predicted;
        let nw = &self.whiten * next;
        let n = pw.nrows();
        let mut block = vec![0.0; next.ncols() * m];
        block.par_chunks_mut(m).enumerate().for_each(|(j, row)| {
            let target = nw.column(j);
            for (i, slot) in row.iter_mut().enumerate() {
                let mut d2 = 0.0;
                for r in 0..n {
                    let e = target[r] - pw[(r, i)];
                    d2 += e * e;
                }
                *slot = current.log_weights[i] - 0.5 * d2;
            }
            let lse = log_sum_exp(row.iter().copied());
            let scale = next_smoothed[j];
            for slot in row.iter_mut() {
                *slot = (*slot - lse).exp() * scale;
            }
        });
        block
    }
}

/// Pairwise smoothing weights `W_k^{(i,j)}` (rows `i` index step `k`, columns `j`
/// step `k+1`), given the smoothed weights of step `k+1`.
pub fn pairwise_weights(
    model: &ShiftModel,
    current: &ParticleSet,
    next: &ParticleSet,
    next_smoothed: &[f64],
    uk: f64,
) -> Result<DMatrix<f64>> {
    let kernel = TransitionKernel::new(model)?;
    let block = kernel.pairwise(model, current, &next.particles, next_smoothed, uk);
    let m = current.len();
    Ok(DMatrix::from_fn(m, next.len(), |i, j| block[j * m + i]))
}

/// FFBSm backward reweighting with `w_{N|N} = w_N`.
pub fn particle_smoother(filtered: &[ParticleSet], model: &ShiftModel, u: &[f64]) -> Result<SmoothedEnsemble> {
    let steps = filtered.len();
    if steps == 0 {
        return Ok(SmoothedEnsemble { particles: vec![], weights: vec![], cross_moments: vec![] });
    }
    if u.len() < steps {
        return Err(Error::Dimension(format!("input has {} samples, filter has {steps}", u.len())));
    }
    let mut weights = vec![Vec::new(); steps];
    let mut cross = vec![DMatrix::zeros(0, 0); steps - 1];
    weights[steps - 1] = filtered[steps - 1].weights.clone();
    if steps > 1 {
        let kernel = TransitionKernel::new(model)?;
        for k in (0..steps - 1).rev() {
            let current = &filtered[k];
            let next = &filtered[k + 1].particles;
            let m = current.len();
            let block = kernel.pairwise(model, current, next, &weights[k + 1], u[k]);
            let mut smoothed: Vec<f64> =
                (0..m).into_par_iter().map(|i| (0..next.ncols()).map(|j| block[j * m + i]).sum()).collect();
            let total: f64 = smoothed.iter().sum();
            smoothed.iter_mut().for_each(|w| *w /= total);

            let n = next.nrows();
            let mut xx = DMatrix::zeros(n, n);
            for j in 0..next.ncols() {
                let row = &block[j * m..(j + 1) * m];
                let s = &current.particles * DVector::from_column_slice(row);
                xx += s * next.column(j).transpose();
            }
            cross[k] = xx;
            weights[k] = smoothed;
        }
    }
    Ok(SmoothedEnsemble {
        particles: filtered.iter().map(|s| s.particles.clone()).collect(),
        weights,
        cross_moments: cross,
    })
}
