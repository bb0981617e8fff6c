use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hamfield::examples::{example_by_name, EXAMPLE_NAMES};
use hamfield_cli::scenario::TASK_NAMES;
use hamfield_cli::selftest::{run_selftest, SelftestOptions, STRICT_SCALE};
use hamfield_cli::{run_scenario, RunOptions};

#[derive(Parser)]
#[command(name = "hamfield", version, about = "Run Hamiltonian boundary-value scenarios and self-checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write report.json plus trajectory tables.
    Run {
        scenario: PathBuf,
        /// Output directory; overrides the scenario and HAMFIELD_OUT.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Integrator step size.
        #[arg(long)]
        step: Option<f64>,
    },
    /// Check every bundled fact and module invariant.
    Selftest {
        /// Tighten all tolerances by a factor of 10^6.
        #[arg(long)]
        strict: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List bundled systems, their facts and the scenario tasks.
    ListExamples,
}

/// Write to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, out, seed, step } => {
            let opts = RunOptions { out, seed, step, default_out: std::env::var_os("HAMFIELD_OUT").map(PathBuf::from) };
            match run_scenario(&scenario, &opts).and_then(|o| o.into_result()) {
                Ok(outcome) => {
                    println!("{}", outcome.out_dir.join(hamfield_cli::report::REPORT_FILE).display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Command::Selftest { strict, seed } => {
            let scale = if strict { STRICT_SCALE } else { 1.0 };
            let report = run_selftest(SelftestOptions { seed, tolerance_scale: scale });
            emit(&report.to_json());
            for check in report.failures() {
                match &check.error {
                    Some(e) => eprintln!("FAIL {}: {e}", check.name),
                    None => eprintln!(
                        "FAIL {}: measured {:e} > tolerance {:e}",
                        check.name, check.measured, check.tolerance
                    ),
                }
            }
            eprintln!("{} passed, {} failed", report.passed, report.failed);
            if report.ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::ListExamples => {
            let mut text = String::new();
            for name in EXAMPLE_NAMES {
                let ex = example_by_name(name).expect("registered");
                let _ = writeln!(text, "{name} (r = {})", ex.system.dim());
                for fact in &ex.facts {
                    let _ = writeln!(text, "  {:<24} {}", fact.key, fact.description);
                }
            }
            let _ = writeln!(text, "tasks: {}", TASK_NAMES.join(", "));
            emit(&text);
            ExitCode::SUCCESS
        }
    }
}
