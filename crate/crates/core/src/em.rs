//! Closed-form M-steps for the shift and incremental parameterizations and
//! the EM loop around the particle (PS-EM) or Kalman (KS-EM) E-step.

use std::time::Instant;

use log::debug;
use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::discretize::{c2d_shift, incremental_to_shift, shift_to_incremental};
use crate::linalg::{clip_eigenvalues, min_eigenvalue, symmetrize};
use crate::model::{ContinuousModel, IncrementalModel, InitialState, InvariantParameters, ShiftModel};
use crate::sampler::QuantizedTrace;
use crate::smoothing::{
    estep_moments, kalman_smoother_moments, particle_filter, particle_smoother, CensoredOutput, FilterConfig,
    MomentSet,
};
use crate::{Error, Result};

/// Gram matrices with a larger condition number are treated as singular.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Which Theorem produces the parameter update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MStepForm {
    Shift,
    #[default]
    Incremental,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EMConfig {
    /// Standard deviation of the regularizing output noise.
    pub eps: f64,
    pub max_iters: usize,
    /// Stop once the relative change of the invariant parameters is at most this.
    pub rel_tol: f64,
    pub particles: usize,
    pub ess_threshold: f64,
    pub form: MStepForm,
    pub seed: u64,
    /// Measurement variance assumed by the Kalman baseline.
    pub baseline_r: f64,
    /// Keep `C` and `D` at their initial values.
    pub freeze_output: bool,
}

impl Default for EMConfig {
    fn default() -> Self {
        EMConfig::new(0.3)
    }
}

impl EMConfig {
    /// Defaults scaled to the quantizer threshold: `ε = τ/100`, `r = τ²/3`.
    pub fn new(tau: f64) -> Self {
        EMConfig {
            eps: 0.01 * tau,
            max_iters: 50,
            rel_tol: 1e-3,
            particles: 1000,
            ess_threshold: 0.5,
            form: MStepForm::Incremental,
            seed: 0,
            baseline_r: tau * tau / 3.0,
            freeze_output: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.max_iters < 1 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.rel_tol > 0.0) {
            return bad(format!("rel_tol must be positive, got {}", self.rel_tol));
        }
        if self.particles < 2 {
            return bad(format!("need at least 2 particles, got {}", self.particles));
        }
        if !(0.0..=1.0).contains(&self.ess_threshold) {
            return bad(format!("ess_threshold must lie in [0, 1], got {}", self.ess_threshold));
        }
        if !(self.baseline_r > 0.0) || !self.baseline_r.is_finite() {
            return bad(format!("baseline_r must be positive, got {}", self.baseline_r));
        }
        Ok(())
    }
}

/// Shift-form M-step output.
#[derive(Clone, Debug)]
pub struct ShiftUpdate {
    pub ad: DMatrix<f64>,
    pub bd: DVector<f64>,
    pub c: RowDVector<f64>,
    pub d: f64,
    pub qd: DMatrix<f64>,
    /// 2-norm condition number of the regressor Gram matrix.
    pub condition: f64,
}

/// Incremental-form M-step output.
#[derive(Clone, Debug)]
pub struct IncrementalUpdate {
    pub ain: DMatrix<f64>,
    pub bin: DVector<f64>,
    pub c: RowDVector<f64>,
    pub d: f64,
    pub qin: DMatrix<f64>,
    pub condition: f64,
}

impl ShiftUpdate {
    pub fn into_model(self, delta: f64) -> ShiftModel {
        ShiftModel { ad: self.ad, bd: self.bd, c: self.c, d: self.d, qd: self.qd, delta }
    }
}

impl IncrementalUpdate {
    pub fn into_model(self, delta: f64) -> IncrementalModel {
        IncrementalModel { ain: self.ain, bin: self.bin, c: self.c, d: self.d, qin: self.qin, delta }
    }
}

/// Factored `[[Γxx, Γuxᵀ], [Γux, Γuu]]`.
struct Regressors {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    condition: f64,
}

impl Regressors {
    fn new(mom: &MomentSet) -> Result<Self> {
        let n = mom.state_dim();
        let mut gram = DMatrix::zeros(n + 1, n + 1);
        gram.view_mut((0, 0), (n, n)).copy_from(&mom.gxx);
        gram.view_mut((0, n), (n, 1)).copy_from(&mom.gux.transpose());
        gram.view_mut((n, 0), (1, n)).copy_from(&mom.gux);
        gram[(n, n)] = mom.guu;
        if !gram.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("moment Gram matrix"));
        }
        let sv = gram.singular_values();
        let condition = sv.max() / sv.min();
        if !(condition <= MAX_GRAM_CONDITION) {
            return Err(Error::InsufficientExcitation { condition });
        }
        Ok(Regressors { lu: gram.lu(), condition })
    }

    /// `G⁻¹ rhs`.
    fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.lu.solve(rhs).ok_or(Error::InsufficientExcitation { condition: f64::INFINITY })
    }
}

/// Stacks `[top; bottom]` as an `(n+1) × m` matrix.
fn stack(top: &DMatrix<f64>, bottom: &RowDVector<f64>) -> DMatrix<f64> {
    let (n, m) = top.shape();
    let mut out = DMatrix::zeros(n + 1, m);
    out.view_mut((0, 0), (n, m)).copy_from(top);
    out.row_mut(n).copy_from(bottom);
    out
}

/// Shared regression: returns `(Φ, Ψ, [C D], residual)` with `[Φ Ψ] = Sᵀ G⁻¹`
/// and `residual = top − Sᵀ G⁻¹ S` for the dynamics right-hand side `S`.
#[allow(clippy::type_complexity)]
fn regress(
    reg: &Regressors,
    mom: &MomentSet,
    dyn_rhs: &DMatrix<f64>,
    second: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>, RowDVector<f64>, f64, DMatrix<f64>)> {
    let n = mom.state_dim();
    let solved = reg.solve(dyn_rhs)?;
    let coeffs = solved.transpose();
    let a = coeffs.view((0, 0), (n, n)).into_owned();
    let b = coeffs.column(n).into_owned();

    let out_rhs = stack(&DMatrix::from_column_slice(n, 1, mom.gxz.as_slice()), &RowDVector::from_element(1, mom.guz));
    let out = reg.solve(&out_rhs)?.transpose();
    let c = out.columns(0, n).into_owned().row(0).into_owned();
    let d = out[(0, n)];

    let residual = symmetrize(&(second - dyn_rhs.transpose() * &solved));
    Ok((a, b, c, d, residual))
}

/// Makes an M-step covariance symmetric PSD, clipping negative eigenvalues
/// that are at rounding level relative to `reference`.
fn covariance_update(raw: DMatrix<f64>, reference: f64, name: &'static str) -> Result<DMatrix<f64>> {
    if !raw.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite(name));
    }
    let min = min_eigenvalue(&raw);
    if min >= 0.0 {
        return Ok(raw);
    }
    let scale = raw.norm().max(reference).max(1e-300);
    if min < -1e-8 * scale {
        return Err(Error::NotPsd { name, min_eigenvalue: min });
    }
    Ok(clip_eigenvalues(&raw, 0.0))
}

/// Maximizer of the surrogate for the shift-operator model.
pub fn mstep_shift(mom: &MomentSet) -> Result<ShiftUpdate> {
    let reg = Regressors::new(mom)?;
    let rhs = stack(&mom.gxq, &mom.guq);
    let (ad, bd, c, d, residual) = regress(&reg, mom, &rhs, &mom.gqq)?;
    let qd = covariance_update(residual / mom.count as f64, mom.gqq.norm() / mom.count as f64, "Qd")?;
    Ok(ShiftUpdate { ad, bd, c, d, qd, condition: reg.condition })
}

/// Maximizer of the surrogate for the incremental model.
pub fn mstep_delta(mom: &MomentSet) -> Result<IncrementalUpdate> {
    let reg = Regressors::new(mom)?;
    let rhs = stack(&mom.gxd, &mom.gud);
    let (ain, bin, c, d, residual) = regress(&reg, mom, &rhs, &mom.gdd)?;
    let qin = covariance_update(
        residual * (mom.delta / mom.count as f64),
        mom.gdd.norm() * mom.delta / mom.count as f64,
        "Qin",
    )?;
    Ok(IncrementalUpdate { ain, bin, c, d, qin, condition: reg.condition })
}

/// `−2Q(θ) − L₀` for the shift-form parameters `model`, with output-noise variance `noise_var`.
pub fn neg2q(model: &ShiftModel, mom: &MomentSet, noise_var: f64) -> Result<f64> {
    let (a, b, c, d) = (&model.ad, &model.bd, &model.c, model.d);
    let chol = model.qd.clone().cholesky().ok_or(Error::SingularTransition)?;
    let logdet: f64 = chol.l().diagonal().iter().map(|x| 2.0 * x.ln()).sum();

    let output = d * d * mom.guu - 2.0 * (c * &mom.gxz)[0] - 2.0 * d * mom.guz
        + 2.0 * d * (&mom.gux * c.transpose())[0]
        + (c * &mom.gxx * c.transpose())[0];

    let bgq = b * &mom.guq;
    let agxq = a * &mom.gxq;
    let cross = a * mom.gux.transpose() * b.transpose();
    let inner = &mom.gqq + a * &mom.gxx * a.transpose() + b * b.transpose() * mom.guu
        - &agxq
        - agxq.transpose()
        - &bgq
        - bgq.transpose()
        + &cross
        + cross.transpose();
    let trace = chol.solve(&inner).trace();
    Ok(mom.count as f64 * logdet + output / noise_var + trace)
}

/// One EM iteration as persisted in the trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Incremental-form matrices read as the continuous-time estimate.
    pub estimate: ContinuousModel,
    pub invariants: InvariantParameters,
    /// `−2Q − L₀` at the updated parameters.
    pub neg2q: f64,
    /// Log-likelihood of the data at the parameters used by this E-step
    /// (exact for KS-EM, the particle-filter estimate for PS-EM).
    pub log_likelihood: f64,
    pub relative_change: f64,
    pub gram_condition: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EMTrace {
    pub method: String,
    pub form: MStepForm,
    pub initial: InvariantParameters,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub iteration_count: usize,
}

enum EStep<'a> {
    Particle(&'a QuantizedTrace),
    Kalman(&'a [f64]),
}

impl EStep<'_> {
    fn name(&self) -> &'static str {
        match self {
            EStep::Particle(_) => "ps-em",
            EStep::Kalman(_) => "ks-em",
        }
    }
}

/// Continuous-time reading of a shift model through its incremental form.
fn continuous_view(model: &ShiftModel, prior: &InitialState) -> ContinuousModel {
    ContinuousModel::from_incremental(&shift_to_incremental(model), prior)
}

/// Raises every eigenvalue of `Qd` to at least `1e-12·trace/n`.
fn floor_transition(qd: &DMatrix<f64>) -> DMatrix<f64> {
    let n = qd.nrows() as f64;
    clip_eigenvalues(qd, 1e-12 * qd.trace() / n)
}

fn check_inputs(u: &[f64], len: usize, delta: f64, init: &ContinuousModel, cfg: &EMConfig) -> Result<ContinuousModel> {
    cfg.validate()?;
    if u.len() != len {
        return Err(Error::Dimension(format!("input has {} samples, output has {len}", u.len())));
    }
    if len < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {delta}")));
    }
    init.clone().validate()
}

fn run_em(
    u: &[f64],
    estep: EStep<'_>,
    init: &ContinuousModel,
    cfg: &EMConfig,
    delta: f64,
) -> Result<(ContinuousModel, EMTrace)> {
    let prior = init.initial_state();
    let mut current = c2d_shift(init, delta)?;
    current.qd = floor_transition(&current.qd);
    let mut estimate = continuous_view(&current, &prior);
    let mut previous = estimate.invariants();
    let mut trace = EMTrace {
        method: estep.name().to_string(),
        form: cfg.form,
        initial: previous.clone(),
        iterations: Vec::with_capacity(cfg.max_iters),
        converged: false,
        iteration_count: 0,
    };

    for iteration in 1..=cfg.max_iters {
        let started = Instant::now();
        let step = || -> Result<(ShiftModel, ContinuousModel, f64, f64, f64)> {
            let (moments, log_likelihood, noise_var) = match &estep {
                EStep::Particle(data) => {
                    let obs = CensoredOutput::new(data, cfg.eps);
                    let fcfg = FilterConfig { particles: cfg.particles, ess_threshold: cfg.ess_threshold, seed: cfg.seed };
                    let filtered = particle_filter(&current, &prior, u, &obs, &fcfg)?;
                    let smoothed = particle_smoother(&filtered.sets, &current, u)?;
                    (estep_moments(&smoothed, u, &obs, &current)?, filtered.log_likelihood, cfg.eps * cfg.eps)
                }
                EStep::Kalman(y) => {
                    let ks = kalman_smoother_moments(&current, &prior, u, y, cfg.baseline_r)?;
                    (ks.moments, ks.log_likelihood, cfg.baseline_r)
                }
            };
            let (mut next, condition, mut view) = match cfg.form {
                MStepForm::Shift => {
                    let up = mstep_shift(&moments)?;
                    let condition = up.condition;
                    let next = up.into_model(delta);
                    let view = continuous_view(&next, &prior);
                    (next, condition, view)
                }
                MStepForm::Incremental => {
                    let up = mstep_delta(&moments)?;
                    let condition = up.condition;
                    let inc = up.into_model(delta);
                    (incremental_to_shift(&inc), condition, ContinuousModel::from_incremental(&inc, &prior))
                }
            };
            if cfg.freeze_output {
                next.c = current.c.clone();
                next.d = current.d;
                view.c = current.c.clone();
                view.d = current.d;
            }
            next.qd = floor_transition(&next.qd);
            let objective = neg2q(&next, &moments, noise_var)?;
            Ok((next, view, objective, log_likelihood, condition))
        };
        let (next, view, objective, log_likelihood, condition) = step().map_err(|e| e.at_iteration(iteration))?;

        let invariants = view.invariants();
        let relative_change = invariants.relative_change(&previous);
        let seconds = started.elapsed().as_secs_f64();
        debug!(
            "{} iteration {iteration}: invariants {:?}, change {relative_change:.3e}, loglik {log_likelihood:.4}, {seconds:.2}s",
            trace.method,
            invariants.to_vec()
        );
        trace.iterations.push(IterationRecord {
            iteration,
            estimate: view.clone(),
            invariants: invariants.clone(),
            neg2q: objective,
            log_likelihood,
            relative_change,
            gram_condition: condition,
            seconds,
        });
        trace.iteration_count = iteration;
        current = next;
        estimate = view;
        previous = invariants;
        if relative_change <= cfg.rel_tol {
            trace.converged = true;
            break;
        }
    }
    Ok((estimate, trace))
}

/// PS-EM: particle E-step over the censoring intervals of `trace`.
pub fn em_identify(
    u: &[f64],
    trace: &QuantizedTrace,
    init: &ContinuousModel,
    cfg: &EMConfig,
) -> Result<(ContinuousModel, EMTrace)> {
    let init = check_inputs(u, trace.len(), trace.delta, init, cfg)?;
    run_em(u, EStep::Particle(trace), &init, cfg, trace.delta)
}

/// KS-EM: Kalman E-step treating `y` as a direct measurement with variance `cfg.baseline_r`.
pub fn ks_em_identify(
    u: &[f64],
    y: &[f64],
    delta: f64,
    init: &ContinuousModel,
    cfg: &EMConfig,
) -> Result<(ContinuousModel, EMTrace)> {
    let init = check_inputs(u, y.len(), delta, init, cfg)?;
    run_em(u, EStep::Kalman(y), &init, cfg, delta)
}
