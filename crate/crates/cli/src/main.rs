use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use tikhon_cli::{dispatch, parse_config, Command, DispatchError, Format, RunOptions};

/// Multi-parameter Tikhonov regularisation experiments.
#[derive(Parser)]
#[command(name = "tikhon", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Minimise the Tikhonov functional for one parameter vector.
    Solve(Args),
    /// Track minimisers under shrinking data, operator and parameter perturbations.
    Stability(Args),
    /// Follow a vanishing parameter schedule and check the selected limit.
    Convergence(Args),
    /// Measure Bregman distances against the certified rate bounds.
    Rates(Args),
    /// Run the quasi-triangle, certificate and Psi self-checks.
    Check(Args),
}

#[derive(clap::Args)]
struct Args {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

const EXIT_VERDICT: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Solve(a) => (Command::Solve, a),
        Cmd::Stability(a) => (Command::Stability, a),
        Cmd::Convergence(a) => (Command::Convergence, a),
        Cmd::Rates(a) => (Command::Rates, a),
        Cmd::Check(a) => (Command::Check, a),
    };
    match run(command, args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn run(command: Command, args: Args) -> anyhow::Result<ExitCode> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut config = match parse_config(&text) {
        Ok(c) => c,
        Err(errors) => {
            eprint!("{errors}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let output = config.output.clone().unwrap_or(tikhon_cli::config::OutputConfig { dir: None, format: None });
    let opts = RunOptions {
        command,
        out_dir: args.out.or(output.dir.map(PathBuf::from)).unwrap_or_else(|| PathBuf::from(".")),
        format: args.format.or(output.format).unwrap_or_default(),
    };
    match dispatch(&config, &opts) {
        Ok(outcome) => {
            let s = outcome.summary;
            println!(
                "{}: {} records, {} violations{}, verdict {} -> {}",
                command.name(),
                outcome.record_count,
                s.violations,
                s.fitted_slope.map(|v| format!(", fitted slope {v:.4}")).unwrap_or_default(),
                if s.verdict { "pass" } else { "fail" },
                outcome.report.display()
            );
            Ok(ExitCode::from(if s.verdict { 0 } else { EXIT_VERDICT }))
        }
        Err(DispatchError::Core(e @ tikhon_core::Error::CertificateViolation { .. })) => {
            eprintln!("certificate rejected: {e}");
            Ok(ExitCode::from(EXIT_VERDICT))
        }
        Err(DispatchError::MissingBlock(name)) => {
            eprintln!("error: configuration has no `{name}` block");
            Ok(ExitCode::from(EXIT_CONFIG))
        }
        Err(e) => Err(e.into()),
    }
}
