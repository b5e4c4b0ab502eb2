use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use karlin_core::harness::{self, parse_override, ExperimentConfig, RunOptions};
use karlin_core::special::ParityPattern;
use karlin_core::theory::m_coeff;

#[derive(Parser)]
#[command(name = "karlin", version, about = "Simulation and theory checks for aggregated random-switching models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a TOML config.
    Run {
        config: PathBuf,
        /// Override a config value, e.g. `--set plan.n=1000`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a theoretical quantity.
    Eval {
        #[command(subcommand)]
        what: EvalCommand,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Coefficient of `|<theta, delta>|^alpha` in the limit log-CF.
    MCoeff {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        /// Comma-separated increasing times in (0, 1].
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<f64>,
        /// Comma-separated 0/1 parity pattern, one entry per time.
        #[arg(long, value_delimiter = ',', required = true)]
        delta: Vec<u8>,
    },
}

fn run(config: PathBuf, set: Vec<String>, options: RunOptions) -> ExitCode {
    let overrides = match set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(harness::EXIT_USAGE as u8);
        }
    };
    let outcome = ExperimentConfig::from_path(&config, &overrides).and_then(|cfg| harness::run_experiment(&cfg, &options));
    match outcome {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            for c in &outcome.report.checks {
                println!(
                    "{} {} simulated={:.6} theoretical={:.6} tolerance={:.3e}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.id,
                    c.simulated,
                    c.theoretical,
                    c.tolerance
                );
            }
            for p in outcome.json_path.iter().chain(&outcome.csv_path) {
                eprintln!("wrote {}", p.display());
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::error_exit_code(&e) as u8)
        }
    }
}

fn eval_m_coeff(alpha: f64, beta: f64, times: Vec<f64>, delta: Vec<u8>) -> ExitCode {
    let result = ParityPattern::new(times, delta.iter().map(|&d| d != 0).collect())
        .and_then(|p| m_coeff(alpha, beta, &p));
    match result {
        Ok(v) => {
            println!("{v:.17e}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::EXIT_USAGE as u8)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, set, out, threads, seed } => run(config, set, RunOptions { threads, out, seed }),
        Command::Eval { what: EvalCommand::MCoeff { alpha, beta, times, delta } } => eval_m_coeff(alpha, beta, times, delta),
    }
}
