//! Scenario runner and self-test for the `hamfield` library.
//!
//! Exit codes: 0 success, 1 self-test failure or I/O error, 2 schema error,
//! 3 task-level failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

/// Atomic file output and trajectory tables.
pub mod output;
/// The JSON report written by every run.
pub mod report;
/// Scenario files and their validation.
pub mod scenario;
/// Bundled facts and module invariants, checked in one pass.
pub mod selftest;
/// Execution of the individual tasks.
pub mod tasks;

use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

pub use report::Report;
pub use scenario::Scenario;

/// A scenario that cannot be run as written.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct SchemaError(pub String);

#[derive(Debug, Error)]
pub enum CliError {
    #[error("schema error: {0}")]
    Schema(#[from] SchemaError),
    #[error("task failed: {0}")]
    Task(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Task(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

/// Command-line overrides applied on top of a scenario file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub step: Option<f64>,
    /// Used when neither `--out` nor the scenario names a directory.
    pub default_out: Option<PathBuf>,
}

pub const DEFAULT_OUT_DIR: &str = "hamfield-out";

#[derive(Debug)]
pub struct RunOutcome {
    pub report: Report,
    pub out_dir: PathBuf,
}

impl RunOutcome {
    /// The task-level failure, if any, as an error carrying exit code 3.
    pub fn into_result(self) -> Result<RunOutcome, CliError> {
        match &self.report.outcome.failure {
            Some(msg) => Err(CliError::Task(msg.clone())),
            None => Ok(self),
        }
    }
}

/// Parse, validate and apply overrides; nothing is computed or written.
pub fn load_scenario(path: &Path, opts: &RunOptions) -> Result<Scenario, SchemaError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| SchemaError(format!("cannot read {}: {e}", path.display())))?;
    let mut scenario = Scenario::parse(&text)?;
    if let Some(seed) = opts.seed {
        scenario.set_seed(seed);
    }
    if let Some(step) = opts.step {
        scenario.set_step(step);
        scenario.validate()?;
    }
    Ok(scenario)
}

fn resolve_out_dir(path: &Path, scenario: &Scenario, opts: &RunOptions) -> PathBuf {
    if let Some(dir) = &opts.out {
        return dir.clone();
    }
    if let Some(dir) = &scenario.output.dir {
        if dir.is_absolute() {
            return dir.clone();
        }
        return path.parent().unwrap_or(Path::new(".")).join(dir);
    }
    opts.default_out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Run a scenario file and write its report and tables.
///
/// A task-level failure still writes the report; it is signalled through
/// `report.outcome` (see [`RunOutcome::into_result`]).
pub fn run_scenario(path: &Path, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let scenario = load_scenario(path, opts)?;
    let prepared = tasks::prepare(&scenario)?;
    let out_dir = resolve_out_dir(path, &scenario, opts);

    let start = Instant::now();
    let output = tasks::execute(&prepared);
    let wall_time_s = start.elapsed().as_secs_f64();

    std::fs::create_dir_all(&out_dir)?;
    let mut files = Vec::new();
    for (name, traj) in &output.trajectories {
        output::write_atomic(&out_dir.join(name), &output::trajectory_csv(traj)?)?;
        files.push(name.clone());
    }
    files.push(report::REPORT_FILE.to_string());
    let report = Report::new(&scenario, output.results, output.failure, files, wall_time_s);
    output::write_atomic(&out_dir.join(report::REPORT_FILE), report.to_json().as_bytes())?;
    Ok(RunOutcome { report, out_dir })
}
