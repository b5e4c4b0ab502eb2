//! Experiment orchestration: config in, JSON report and CSV plot data out.

pub mod config;
pub mod experiments;
pub mod report;

use std::path::PathBuf;

pub use config::{parse_override, ExperimentConfig, ExperimentKind, DEFAULT_SEED};
pub use experiments::execute;
pub use report::{emit_plot_data, Check, Report};

use crate::error::{Error, Result};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_GATE_FAILURE: i32 = 4;

/// Command-line settings layered over the config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: Report,
    pub warnings: Vec<String>,
    pub json_path: Option<PathBuf>,
    pub csv_path: Option<PathBuf>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.all_passed() {
            EXIT_PASS
        } else {
            EXIT_GATE_FAILURE
        }
    }
}

/// Exit code for a failed run.
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Budget { .. } | Error::BudgetExhausted { .. } | Error::TruncationCap(_) => EXIT_BUDGET,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

/// Runs `execute` on a pool of `threads` workers (all cores by default).
pub fn execute_with_threads(config: &ExperimentConfig, threads: Option<usize>) -> Result<Report> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| execute(config))
}

/// Runs the experiment and writes `<experiment>.json` and `<experiment>.csv`
/// into the output directory.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunOutcome> {
    let mut config = config.clone();
    if let Some(seed) = options.seed {
        config.plan.seed = Some(seed);
    }
    if let Some(out) = &options.out {
        config.output.dir = out.clone();
    }
    let warnings = config.validate()?;
    let report = execute_with_threads(&config, options.threads)?;
    let dir = &config.output.dir;
    let (mut json_path, mut csv_path) = (None, None);
    if config.output.json || config.output.csv {
        std::fs::create_dir_all(dir)?;
    }
    if config.output.json {
        let p = dir.join(format!("{}.json", report.experiment));
        std::fs::write(&p, report.to_json()?)?;
        json_path = Some(p);
    }
    if config.output.csv {
        let p = dir.join(format!("{}.csv", report.experiment));
        emit_plot_data(&report, std::fs::File::create(&p)?)?;
        csv_path = Some(p);
    }
    Ok(RunOutcome { report, warnings, json_path, csv_path })
}
