//! Reproducible simulation studies: paired PS-EM / KS-EM runs on shared
//! simulated data, Monte Carlo aggregation and summary tables.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{em_identify, ks_em_identify, EMConfig, EMTrace, MStepForm};
use crate::io::{self, write_csv, write_json};
use crate::model::{ContinuousModel, InvariantParameters};
use crate::response::{frequency_response, log_grid, max_magnitude_deviation_db};
use crate::sampler::{build_trace, gaussian_input, lebesgue_sample, simulate_sde, CensoringRule, EventRecord, QuantizedTrace};
use crate::{Error, Result};

/// The first-order system `dx = (−x + 0.7u)dt + dw`, `E{dw²} = 0.5 dt`, `z = x`,
/// started from its noise-only stationary distribution.
pub fn reference_system() -> ContinuousModel {
    ContinuousModel::scalar(-1.0, 0.7, 1.0, 0.0, 0.5, 0.0, 0.25)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSpec {
    /// Standard deviation of the i.i.d. Gaussian input.
    pub sigma: f64,
    /// Single-column CSV (`u`) used instead of the Gaussian input.
    pub csv: Option<PathBuf>,
}

impl Default for InputSpec {
    fn default() -> Self {
        InputSpec { sigma: 10.0, csv: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// True system; the built-in first-order reference system when absent.
    pub model: Option<PathBuf>,
    /// EM starting model before perturbation; the true system when absent.
    pub init: Option<PathBuf>,
    pub tau: f64,
    pub delta: f64,
    pub samples: usize,
    pub input: InputSpec,
    pub censoring: CensoringRule,
    /// Relative half-width of the uniform scaling applied to the initial `A`, `B`, `Q`.
    pub perturbation: f64,
    /// Output regularization std; `τ/100` when absent.
    pub eps: Option<f64>,
    /// KS-EM measurement variance; `τ²/3` when absent.
    pub baseline_r: Option<f64>,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub particles: usize,
    pub ess_threshold: f64,
    pub form: MStepForm,
    pub freeze_output: bool,
    pub seed: u64,
    pub runs: usize,
    pub out: PathBuf,
    pub omega_min: f64,
    pub omega_max: f64,
    pub omega_points: usize,
    /// Frequency band over which the per-run magnitude error is reported.
    pub error_band: [f64; 2],
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: None,
            init: None,
            tau: 0.3,
            delta: 0.01,
            samples: 500,
            input: InputSpec::default(),
            censoring: CensoringRule::default(),
            perturbation: 0.5,
            eps: None,
            baseline_r: None,
            max_iters: 50,
            rel_tol: 1e-3,
            particles: 200,
            ess_threshold: 0.5,
            form: MStepForm::Incremental,
            freeze_output: true,
            seed: 1,
            runs: 20,
            out: PathBuf::from("results"),
            omega_min: 1e-2,
            omega_max: 1e2,
            omega_points: 200,
            error_band: [0.1, 10.0],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if self.samples < 2 {
            return bad(format!("samples must be at least 2, got {}", self.samples));
        }
        if self.runs < 1 {
            return bad("runs must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.perturbation) {
            return bad(format!("perturbation must lie in [0, 1), got {}", self.perturbation));
        }
        if self.input.csv.is_none() && !(self.input.sigma >= 0.0) {
            return bad(format!("input sigma must be non-negative, got {}", self.input.sigma));
        }
        log_grid(self.omega_min, self.omega_max, self.omega_points)?;
        log_grid(self.error_band[0], self.error_band[1], 2)?;
        self.em_config(0).validate()
    }

    pub fn em_config(&self, seed: u64) -> EMConfig {
        let defaults = EMConfig::new(self.tau);
        EMConfig {
            eps: self.eps.unwrap_or(defaults.eps),
            baseline_r: self.baseline_r.unwrap_or(defaults.baseline_r),
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            particles: self.particles,
            ess_threshold: self.ess_threshold,
            form: self.form,
            seed,
            freeze_output: self.freeze_output,
        }
    }

    pub fn truth(&self) -> Result<ContinuousModel> {
        match &self.model {
            Some(path) => io::read_model(path),
            None => Ok(reference_system()),
        }
    }

    /// The unperturbed starting model.
    pub fn init_model(&self, truth: &ContinuousModel) -> Result<ContinuousModel> {
        match &self.init {
            Some(path) => io::read_model(path),
            None => Ok(truth.clone()),
        }
    }

    pub fn omegas(&self) -> Result<Vec<f64>> {
        log_grid(self.omega_min, self.omega_max, self.omega_points)
    }

    fn error_band_grid(&self) -> Result<Vec<f64>> {
        log_grid(self.error_band[0], self.error_band[1], 100)
    }
}

/// Independent seeds of one Monte Carlo run, all derived from `base + run`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub run_seed: u64,
    pub input: u64,
    pub noise: u64,
    pub init: u64,
    pub filter: u64,
}

impl RunSeeds {
    pub fn new(base: u64, run: usize) -> Self {
        let run_seed = base.wrapping_add(run as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
        RunSeeds { run_seed, input: rng.random(), noise: rng.random(), init: rng.random(), filter: rng.random() }
    }
}

/// Simulated data of one run.
#[derive(Clone, Debug)]
pub struct RunData {
    pub seeds: RunSeeds,
    pub u: Vec<f64>,
    pub z: Vec<f64>,
    pub events: EventRecord,
    pub trace: QuantizedTrace,
}

fn read_input_csv(path: &Path, len: usize) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut u = Vec::with_capacity(len);
    for record in reader.records() {
        let record = record?;
        let raw = record.get(0).unwrap_or("");
        u.push(raw.parse::<f64>().map_err(|_| Error::Parse(format!("{}: cannot parse {raw:?}", path.display())))?);
    }
    if u.len() < len {
        return Err(Error::InvalidArgument(format!("{} has {} samples, need {len}", path.display(), u.len())));
    }
    u.truncate(len);
    Ok(u)
}

pub fn simulate_run(cfg: &ExperimentConfig, truth: &ContinuousModel, run: usize) -> Result<RunData> {
    let seeds = RunSeeds::new(cfg.seed, run);
    let u = match &cfg.input.csv {
        Some(path) => read_input_csv(path, cfg.samples)?,
        None => gaussian_input(cfg.samples, cfg.input.sigma, seeds.input),
    };
    let sim = simulate_sde(truth, &u, cfg.delta, seeds.noise)?;
    let events = lebesgue_sample(&sim.z, cfg.tau, cfg.delta)?;
    let trace = build_trace(&events, cfg.samples, cfg.censoring)?;
    Ok(RunData { seeds, u, z: sim.z, events, trace })
}

/// Scales `A`, `B` and `Q` by independent factors `1 + h·U(−1, 1)`.
pub fn perturb_init(init: &ContinuousModel, half_width: f64, seed: u64) -> ContinuousModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factor = || 1.0 + half_width * rng.random_range(-1.0..=1.0);
    let mut out = init.clone();
    out.a *= factor();
    out.b *= factor();
    out.q *= factor();
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ps-em")]
    ParticleSmoother,
    #[serde(rename = "ks-em")]
    KalmanSmoother,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::ParticleSmoother, Method::KalmanSmoother];

    pub fn name(self) -> &'static str {
        match self {
            Method::ParticleSmoother => "ps-em",
            Method::KalmanSmoother => "ks-em",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    /// `None` on success, otherwise the failure message.
    pub error: Option<String>,
    pub estimate: Option<ContinuousModel>,
    pub trace: Option<EMTrace>,
    /// Largest magnitude error against the true system over the error band.
    pub max_db_error: Option<f64>,
    pub seconds: f64,
}

impl MethodOutcome {
    pub fn invariants(&self) -> Option<InvariantParameters> {
        self.estimate.as_ref().map(ContinuousModel::invariants)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub seeds: RunSeeds,
    pub events: usize,
    pub init: ContinuousModel,
    pub outcomes: Vec<MethodOutcome>,
}

impl RunResult {
    pub fn outcome(&self, method: Method) -> &MethodOutcome {
        self.outcomes.iter().find(|o| o.method == method).expect("every run holds both methods")
    }
}

/// Identifies one simulated data set with the requested method.
pub fn identify(
    method: Method,
    data: &RunData,
    init: &ContinuousModel,
    em: &EMConfig,
) -> Result<(ContinuousModel, EMTrace)> {
    match method {
        Method::ParticleSmoother => em_identify(&data.u, &data.trace, init, em),
        Method::KalmanSmoother => ks_em_identify(&data.u, &data.trace.y, data.trace.delta, init, em),
    }
}

/// Both methods on the same simulated data and the same initial model.
pub fn run_paired(cfg: &ExperimentConfig, truth: &ContinuousModel, base_init: &ContinuousModel, run: usize) -> Result<RunResult> {
    let data = simulate_run(cfg, truth, run)?;
    let init = perturb_init(base_init, cfg.perturbation, data.seeds.init);
    let em = cfg.em_config(data.seeds.filter);
    let band = cfg.error_band_grid()?;
    let outcomes = Method::ALL
        .iter()
        .map(|&method| {
            let started = Instant::now();
            let result = identify(method, &data, &init, &em);
            let seconds = started.elapsed().as_secs_f64();
            match result {
                Ok((estimate, trace)) => {
                    info!("run {run} {}: {} iterations in {seconds:.1}s", method.name(), trace.iteration_count);
                    MethodOutcome {
                        method,
                        error: None,
                        max_db_error: Some(max_magnitude_deviation_db(truth, &estimate, &band)),
                        estimate: Some(estimate),
                        trace: Some(trace),
                        seconds,
                    }
                }
                Err(e) => {
                    warn!("run {run} {} failed: {e}", method.name());
                    MethodOutcome { method, error: Some(e.to_string()), estimate: None, trace: None, max_db_error: None, seconds }
                }
            }
        })
        .collect();
    Ok(RunResult { run, seeds: data.seeds, events: data.events.len(), init, outcomes })
}

/// Runs every Monte Carlo replicate on a pool of `jobs` threads (all cores when `None`).
/// When `run_dir` is given each run's result is written there as soon as it finishes.
pub fn montecarlo(
    cfg: &ExperimentConfig,
    truth: &ContinuousModel,
    base_init: &ContinuousModel,
    jobs: Option<usize>,
    run_dir: Option<&Path>,
) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..cfg.runs)
            .into_par_iter()
            .map(|run| {
                let result = run_paired(cfg, truth, base_init, run)?;
                if let Some(dir) = run_dir {
                    write_json(&dir.join(format!("run_{run:04}.json")), &result)?;
                }
                Ok(result)
            })
            .collect()
    })
}

/// `(q1, median, q3)` by linear interpolation between order statistics
/// (`h = (n−1)p`, the inclusive rule).
pub fn quartiles(values: &[f64]) -> Option<(f64, f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |p: f64| {
        let h = (v.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(v.len() - 1);
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    Some((at(0.25), at(0.5), at(0.75)))
}

fn number(x: f64) -> String {
    x.to_string()
}

fn aggregate_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> =
        ["run", "seed", "method", "status", "error", "events", "iterations", "converged"].map(String::from).to_vec();
    h.extend(InvariantParameters::names(n));
    h.push("max_db_error".into());
    h
}

/// One row per (run, method).
pub fn aggregate_rows(results: &[RunResult], n: usize) -> (Vec<String>, Vec<Vec<String>>) {
    let width = 2 * n + 3;
    let rows = results
        .iter()
        .flat_map(|r| {
            r.outcomes.iter().map(move |o| {
                let mut row = vec![r.run.to_string(), r.seeds.run_seed.to_string(), o.method.name().to_string()];
                row.push(if o.error.is_none() { "ok" } else { "failed" }.to_string());
                row.push(o.error.clone().unwrap_or_default());
                row.push(r.events.to_string());
                match (&o.trace, o.invariants()) {
                    (Some(t), Some(inv)) => {
                        row.push(t.iteration_count.to_string());
                        row.push(t.converged.to_string());
                        row.extend(inv.to_vec().into_iter().map(number));
                        row.push(o.max_db_error.map(number).unwrap_or_default());
                    }
                    _ => row.extend(std::iter::repeat_n(String::new(), width + 3)),
                }
                row
            })
        })
        .collect();
    (aggregate_header(n), rows)
}

/// Per method and parameter: number of successful runs, quartiles and median.
pub fn summary_rows(results: &[RunResult], n: usize) -> Vec<Vec<String>> {
    let mut names = InvariantParameters::names(n);
    names.push("max_db_error".into());
    let mut rows = Vec::new();
    for method in Method::ALL {
        let ok: Vec<&MethodOutcome> =
            results.iter().map(|r| r.outcome(method)).filter(|o| o.estimate.is_some()).collect();
        let values: Vec<Vec<f64>> = ok
            .iter()
            .map(|o| {
                let mut v = o.invariants().map(|i| i.to_vec()).unwrap_or_default();
                v.push(o.max_db_error.unwrap_or(f64::NAN));
                v
            })
            .collect();
        for (p, name) in names.iter().enumerate() {
            let column: Vec<f64> = values.iter().filter_map(|v| v.get(p).copied()).filter(|x| x.is_finite()).collect();
            let mut row = vec![method.name().to_string(), name.clone(), column.len().to_string()];
            match quartiles(&column) {
                Some((q1, med, q3)) => row.extend([q1, med, q3].map(number)),
                None => row.extend([String::new(), String::new(), String::new()]),
            }
            rows.push(row);
        }
    }
    rows
}

/// Per frequency: true magnitude and the quartile band of each method's estimates.
pub fn bode_envelope_rows(results: &[RunResult], truth: &ContinuousModel, omegas: &[f64]) -> Vec<Vec<String>> {
    let truth_response = frequency_response(truth, omegas);
    let per_method: Vec<Vec<Vec<(f64, f64)>>> = Method::ALL
        .iter()
        .map(|&m| {
            results
                .iter()
                .filter_map(|r| r.outcome(m).estimate.as_ref())
                .map(|e| frequency_response(e, omegas).points.iter().map(|p| (p.omega, p.magnitude_db())).collect())
                .collect()
        })
        .collect();
    truth_response
        .points
        .iter()
        .map(|p| {
            let mut row = vec![number(p.omega), number(p.magnitude_db())];
            for responses in &per_method {
                let mags: Vec<f64> = responses
                    .iter()
                    .filter_map(|r| r.iter().find(|(w, _)| *w == p.omega).map(|&(_, m)| m))
                    .collect();
                match quartiles(&mags) {
                    Some((q1, med, q3)) => row.extend([q1, med, q3].map(number)),
                    None => row.extend([String::new(), String::new(), String::new()]),
                }
            }
            row
        })
        .collect()
}

pub const SUMMARY_COLUMNS: [&str; 6] = ["method", "parameter", "runs", "q1", "median", "q3"];
pub const BODE_ENVELOPE_COLUMNS: [&str; 8] =
    ["omega", "true_db", "ps_q1_db", "ps_median_db", "ps_q3_db", "ks_q1_db", "ks_median_db", "ks_q3_db"];

/// Writes `aggregate.csv`, `summary.csv` and `bode_envelope.csv` into `dir`.
pub fn write_tables(dir: &Path, results: &[RunResult], truth: &ContinuousModel, omegas: &[f64]) -> Result<()> {
    let n = truth.state_dim();
    let (header, rows) = aggregate_rows(results, n);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&dir.join("aggregate.csv"), &header, rows)?;
    write_csv(&dir.join("summary.csv"), &SUMMARY_COLUMNS, summary_rows(results, n))?;
    write_csv(&dir.join("bode_envelope.csv"), &BODE_ENVELOPE_COLUMNS, bode_envelope_rows(results, truth, omegas))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_type_seven() {
        assert_eq!(quartiles(&[3.0]), Some((3.0, 3.0, 3.0)));
        assert_eq!(quartiles(&[4.0, 1.0, 3.0, 2.0]), Some((1.75, 2.5, 3.25)));
        assert_eq!(quartiles(&[1.0, 2.0, 3.0, 4.0, 5.0]), Some((2.0, 3.0, 4.0)));
        assert_eq!(quartiles(&[]), None);
    }

    #[test]
    fn seeds_are_distinct_and_reproducible() {
        let a = RunSeeds::new(10, 3);
        assert_eq!(a, RunSeeds::new(10, 3));
        assert_eq!(a.run_seed, 13);
        assert_eq!(RunSeeds::new(12, 1), RunSeeds::new(11, 2));
        let all = [a.input, a.noise, a.init, a.filter];
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(all[i], all[j]);
            }
        }
    }

    #[test]
    fn perturbation_stays_in_band() {
        let m = reference_system();
        for seed in 0..50 {
            let p = perturb_init(&m, 0.5, seed);
            let ratio = p.a[(0, 0)] / m.a[(0, 0)];
            assert!((0.5..=1.5).contains(&ratio));
            assert_eq!(p.c, m.c);
        }
        assert_eq!(perturb_init(&m, 0.0, 3), m);
    }

    #[test]
    fn simulated_runs_share_data_across_methods() {
        let cfg = ExperimentConfig { samples: 100, ..Default::default() };
        let truth = reference_system();
        let a = simulate_run(&cfg, &truth, 2).unwrap();
        let b = simulate_run(&cfg, &truth, 2).unwrap();
        assert_eq!(a.u, b.u);
        assert_eq!(a.trace, b.trace);
        assert_ne!(simulate_run(&cfg, &truth, 3).unwrap().u, a.u);
    }

    #[test]
    fn single_run_summary_equals_run() {
        let cfg = ExperimentConfig { samples: 200, runs: 1, particles: 30, max_iters: 3, ..Default::default() };
        let truth = reference_system();
        let results = montecarlo(&cfg, &truth, &truth, Some(1), None).unwrap();
        let rows = summary_rows(&results, 1);
        assert_eq!(rows.iter().filter(|r| r[1] == "eig_re_1").count(), 2);
        for row in rows.iter().filter(|r| r[1] == "eig_re_1") {
            let method = if row[0] == "ps-em" { Method::ParticleSmoother } else { Method::KalmanSmoother };
            let inv = results[0].outcome(method).invariants().unwrap();
            let v: f64 = row[4].parse().unwrap();
            assert_eq!(v, inv.eigenvalues[0].0);
            assert_eq!(row[3], row[4]);
            assert_eq!(row[4], row[5]);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(ExperimentConfig { runs: 0, ..Default::default() }.validate().is_err());
        assert!(ExperimentConfig { samples: 1, ..Default::default() }.validate().is_err());
        assert!(ExperimentConfig { omega_min: -1.0, ..Default::default() }.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn config_parses_from_toml_fields() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"tau": 0.5, "runs": 3, "input": {"sigma": 2.0}}"#).unwrap();
        assert_eq!(cfg.tau, 0.5);
        assert_eq!(cfg.runs, 3);
        assert_eq!(cfg.input.sigma, 2.0);
        assert_eq!(cfg.em_config(0).eps, 0.005);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
