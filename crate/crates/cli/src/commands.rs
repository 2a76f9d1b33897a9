use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use log::info;
use lsid::experiment::{self, ExperimentConfig, Method};
use lsid::io;
use lsid::response::{frequency_response, log_grid, max_magnitude_deviation_db};
use lsid::sampler::QuantizedTrace;

use crate::{Command, Grid, MethodArg, Overrides};

fn load_config(overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match &overrides.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { overrides, run } => simulate(&load_config(&overrides)?, run),
        Command::Identify { overrides, trace, init, method } => {
            identify(&load_config(&overrides)?, &trace, &init, method)
        }
        Command::Montecarlo { overrides, runs, jobs } => {
            let mut cfg = load_config(&overrides)?;
            if let Some(runs) = runs {
                cfg.runs = runs;
            }
            montecarlo(&cfg, jobs)
        }
        Command::Bode { model, grid, out } => bode(&model, &grid, out.as_deref()),
        Command::Compare { truth, estimate, grid } => compare(&truth, &estimate, &grid),
    }
}

fn simulate(cfg: &ExperimentConfig, run: usize) -> Result<()> {
    cfg.validate()?;
    let truth = cfg.truth()?;
    let data = experiment::simulate_run(cfg, &truth, run)?;
    io::write_trace_csv(&cfg.out.join("trace.csv"), &data.u, &data.z, &data.trace)?;
    io::write_events_csv(&cfg.out.join("events.csv"), &data.events)?;
    info!("{} samples, {} events written to {}", data.u.len(), data.events.len(), cfg.out.display());
    Ok(())
}

fn identify(cfg: &ExperimentConfig, trace_path: &Path, init_path: &Path, method: MethodArg) -> Result<()> {
    cfg.validate()?;
    let file = io::read_trace_csv(trace_path, cfg.tau).with_context(|| format!("reading {}", trace_path.display()))?;
    let init = io::read_model(init_path).with_context(|| format!("reading {}", init_path.display()))?;
    let em = cfg.em_config(cfg.seed);
    let trace: &QuantizedTrace = &file.trace;
    let (estimate, em_trace) = match method {
        MethodArg::Ps => lsid::em::em_identify(&file.u, trace, &init, &em)?,
        MethodArg::Ks => lsid::em::ks_em_identify(&file.u, &trace.y, trace.delta, &init, &em)?,
    };
    io::write_model(&cfg.out.join("estimate.json"), &estimate)?;
    io::write_json(&cfg.out.join("em_trace.json"), &em_trace)?;
    info!(
        "{} finished after {} iterations (converged: {})",
        em_trace.method, em_trace.iteration_count, em_trace.converged
    );
    Ok(())
}

fn montecarlo(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<()> {
    cfg.validate()?;
    let truth = cfg.truth()?;
    let init = cfg.init_model(&truth)?;
    let omegas = cfg.omegas()?;
    let results = experiment::montecarlo(cfg, &truth, &init, jobs, Some(&cfg.out.join("runs")))?;
    experiment::write_tables(&cfg.out, &results, &truth, &omegas)?;
    io::write_atomic(&cfg.out.join("config.toml"), toml::to_string(cfg)?.as_bytes())?;
    for method in Method::ALL {
        let failed = results.iter().filter(|r| r.outcome(method).error.is_some()).count();
        info!("{}: {} of {} runs succeeded", method.name(), results.len() - failed, results.len());
    }
    Ok(())
}

fn grid(g: &Grid) -> Result<Vec<f64>> {
    Ok(log_grid(g.omega_min, g.omega_max, g.points)?)
}

fn bode(model_path: &Path, g: &Grid, out: Option<&Path>) -> Result<()> {
    let model = io::read_model(model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let response = frequency_response(&model, &grid(g)?);
    for w in &response.skipped {
        log::warn!("jωI − A is singular at ω = {w}; row skipped");
    }
    match out {
        Some(path) => io::write_frequency_response_csv(path, &response)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "omega,mag_db,phase_deg")?;
            for (p, phase) in response.points.iter().zip(response.unwrapped_phase_deg()) {
                writeln!(stdout, "{},{},{}", p.omega, p.magnitude_db(), phase)?;
            }
        }
    }
    Ok(())
}

fn compare(truth_path: &Path, estimate_path: &Path, g: &Grid) -> Result<()> {
    let truth = io::read_model(truth_path).with_context(|| format!("reading {}", truth_path.display()))?;
    let estimate = io::read_model(estimate_path).with_context(|| format!("reading {}", estimate_path.display()))?;
    let omegas = grid(g)?;
    let report = serde_json::json!({
        "truth": truth.invariants(),
        "estimate": estimate.invariants(),
        "relative_change": estimate.invariants().relative_change(&truth.invariants()),
        "max_db_deviation": max_magnitude_deviation_db(&truth, &estimate, &omegas),
        "omega_min": g.omega_min,
        "omega_max": g.omega_max,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
