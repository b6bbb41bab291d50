//! `confsens` — sensitivity analysis for unmeasured confounding.
//!
//! Two subcommands: `analyze` runs the elimination/perturbation/extrapolation
//! pipeline on a CSV; `simulate` runs one simulation-study scenario. Exit
//! codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod analyze;
mod config;
mod simulate;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{AnalyzeConfig, AnalyzeFlags, SimulateConfig, SimulateFlags};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn stage(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(name = "confsens", version, about = "Sensitivity analysis for unmeasured confounding via effect extrapolation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze a CSV dataset: elimination trajectory, perturbations, spline
    /// extrapolation, uncertainty intervals and a trajectory plot.
    Analyze(AnalyzeArgs),
    /// Run one simulation-study scenario and report bias, MSE and coverage.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Optional TOML config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV (RFC-4180, header row).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Name of the binary exposure column.
    #[arg(long)]
    exposure: Option<String>,
    /// Name of the outcome column.
    #[arg(long)]
    outcome: Option<String>,
    /// Outcome coding: binary | continuous (inferred when omitted).
    #[arg(long = "outcome-kind")]
    outcome_kind: Option<String>,
    /// Comma-separated covariate list, or "all-others" (default).
    #[arg(long)]
    covariates: Option<String>,
    /// Number of perturbed trajectories B (default 500).
    #[arg(long)]
    b: Option<usize>,
    /// Two-sided CI level alpha (default 0.05).
    #[arg(long)]
    alpha: Option<f64>,
    /// Largest extrapolation horizon (default: half the covariate count).
    #[arg(long = "q-max")]
    q_max: Option<usize>,
    /// Fraction of extreme CI endpoints trimmed per horizon (default 0.05).
    #[arg(long)]
    trim: Option<f64>,
    /// Interior-knot policy: cv | max | <K> (default max).
    #[arg(long)]
    knots: Option<String>,
    /// RNG seed (required; there is no wall-clock default).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Error on missing cells instead of dropping incomplete rows.
    #[arg(long = "keep-incomplete", default_value_t = false)]
    keep_incomplete: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Optional TOML config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Study number: 1 (binary outcome) or 2 (continuous outcome).
    #[arg(long)]
    study: Option<u8>,
    /// Measured confounder count p.
    #[arg(long)]
    p: Option<usize>,
    /// Unmeasured confounder count q (default 0).
    #[arg(long)]
    q: Option<usize>,
    /// Conditional exposure coefficient delta (default 0).
    #[arg(long)]
    delta: Option<f64>,
    /// Exposure link for Study 2 generation: logit | probit (default logit).
    #[arg(long)]
    link: Option<String>,
    /// Sample size n per replicate (default 1000).
    #[arg(long)]
    n: Option<usize>,
    /// Population size N (default 50000).
    #[arg(long)]
    population: Option<usize>,
    /// Number of replicates (default 1000).
    #[arg(long)]
    replicates: Option<usize>,
    /// Number of perturbed trajectories B per replicate (default 500).
    #[arg(long)]
    b: Option<usize>,
    /// RNG seed (required; there is no wall-clock default).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes, anything else is usage.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let result = match cli.command {
        Command::Analyze(args) => AnalyzeConfig::resolve(AnalyzeFlags {
            config: args.config,
            data: args.data,
            exposure: args.exposure,
            outcome: args.outcome,
            outcome_kind: args.outcome_kind,
            covariates: args.covariates,
            b: args.b,
            alpha: args.alpha,
            q_max: args.q_max,
            trim: args.trim,
            knots: args.knots,
            seed: args.seed,
            out: args.out,
            keep_incomplete: args.keep_incomplete,
        })
        .and_then(|config| analyze::run(&config)),
        Command::Simulate(args) => SimulateConfig::resolve(SimulateFlags {
            config: args.config,
            study: args.study,
            p: args.p,
            q: args.q,
            delta: args.delta,
            link: args.link,
            n: args.n,
            population: args.population,
            replicates: args.replicates,
            b: args.b,
            seed: args.seed,
            out: args.out,
        })
        .and_then(|config| simulate::run(&config)),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("confsens: {} error: {}", e.stage(), e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
