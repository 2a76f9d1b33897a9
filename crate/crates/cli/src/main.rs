//! `lsid`: simulate, identify and benchmark continuous-time models from
//! send-on-delta sampled data.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "lsid", version, about)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

/// Flags that override the config file.
#[derive(Args, Debug, Default, Clone)]
struct Overrides {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; run r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct Grid {
    #[arg(long, default_value_t = 1e-2)]
    omega_min: f64,
    #[arg(long, default_value_t = 1e2)]
    omega_max: f64,
    #[arg(long, default_value_t = 200)]
    points: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum MethodArg {
    Ps,
    Ks,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one data set and write `trace.csv` and `events.csv`.
    Simulate {
        #[command(flatten)]
        overrides: Overrides,
        /// Monte Carlo run index whose data to generate.
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Identify a model from a trace file; writes `estimate.json` and `em_trace.json`.
    Identify {
        #[command(flatten)]
        overrides: Overrides,
        /// Trace CSV as written by `simulate`.
        #[arg(long)]
        trace: PathBuf,
        /// Initial model JSON.
        #[arg(long)]
        init: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Ps)]
        method: MethodArg,
    },
    /// Paired PS-EM / KS-EM Monte Carlo study with aggregate and summary tables.
    Montecarlo {
        #[command(flatten)]
        overrides: Overrides,
        /// Number of runs.
        #[arg(long)]
        runs: Option<usize>,
        /// Worker threads; all cores by default.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Frequency response of a model as `omega,mag_db,phase_deg`.
    Bode {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        grid: Grid,
        /// Output CSV; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Invariant parameters and worst magnitude deviation of an estimate against a reference.
    Compare {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        #[command(flatten)]
        grid: Grid,
    },
}

/// 0 success, 1 usage or I/O, 2 numerical failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().filter_map(|e| e.downcast_ref::<lsid::Error>()).any(lsid::Error::is_numerical);
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
