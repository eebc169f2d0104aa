use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cran_swipt::error::{Error, Result};
use cran_swipt::experiment::{
    parse_algorithms, rows_to_csv, run_longterm, run_single_slot, run_sweep, run_validate, write_csv,
    ExperimentConfig, RunOutput,
};

#[derive(Parser)]
#[command(name = "cran-swipt", version, about = "Green C-RAN SWIPT beamforming and ET group division experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One channel draw per trial, every selected algorithm.
    SingleSlot(RunArgs),
    /// Single-slot runs over the configured sweep grid.
    Sweep(RunArgs),
    /// Training stage followed by the long-term stage.
    Longterm(RunArgs),
    /// Invariant suite; exits with 2 on any failure.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct Common {
    /// TOML config with dotted keys (system.*, topology.*, run.*, ...).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// CSV destination; rows go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of alg1, alg2, all_fet, all_met, brute_force.
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<String>>,
    /// Append to an existing CSV of the same config.
    #[arg(long)]
    append: bool,
    /// Fill the solve_ms column (output is then no longer reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    /// Number of generated instances.
    #[arg(long)]
    instances: Option<usize>,
    /// Solver tolerance used inside the suite.
    #[arg(long)]
    solver_tol: Option<f64>,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.trials {
        cfg.n_trials = t;
        cfg.longterm.n_trials = t;
    }
    Ok(cfg)
}

fn run(args: &RunArgs, f: fn(&ExperimentConfig) -> Result<RunOutput>) -> Result<ExitCode> {
    let mut cfg = load(&args.common)?;
    if let Some(a) = &args.algorithms {
        cfg.algorithms = parse_algorithms(a)?;
    }
    cfg.record_timing |= args.timing;
    cfg.validate()?;
    let out = f(&cfg)?;
    match &args.out {
        Some(path) => {
            write_csv(path, &out.rows, &cfg.hash(), args.append)?;
            print!("{}", out.summary);
        }
        None => {
            print!("{}", rows_to_csv(&out.rows, true)?);
            eprint!("{}", out.summary);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(args: &ValidateArgs) -> Result<ExitCode> {
    let mut cfg = load(&args.common)?;
    if let Some(n) = args.instances {
        cfg.validate.instances = n;
    }
    if args.solver_tol.is_some() {
        cfg.validate.solver_tol = args.solver_tol;
    }
    let report = run_validate(&cfg)?;
    print!("{}", report.render());
    if let Some(path) = &args.out {
        std::fs::write(path, serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        println!("seed {}: validation failed", cfg.seed);
        ExitCode::from(2)
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::SingleSlot(a) => run(a, run_single_slot),
        Command::Sweep(a) => run(a, run_sweep),
        Command::Longterm(a) => run(a, run_longterm),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(code) => code,
        Err(e @ Error::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
