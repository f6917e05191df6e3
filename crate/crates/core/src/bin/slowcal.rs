use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use slowcal_core::config::{ExperimentSpec, ProblemKind};
use slowcal_core::runner::{self, ExperimentReport};
use slowcal_core::verify::verify_suite;

const EXIT_DIVERGED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "slowcal", version, about = "Parameter-server SGD experiments: Minibatch-SGD, Local-SGD, SLowcal-SGD")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "SLOWCAL_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `out_dir` from the config.
        #[arg(long, env = "SLOWCAL_OUT_DIR")]
        out: Option<PathBuf>,
    },
    /// Run the cartesian product of algorithm x M x K x seeds into one CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "SLOWCAL_OUT_DIR")]
        out: PathBuf,
    },
    /// Check the exact identities and invariants.
    Verify,
    /// Logistic regression on MNIST split across machines.
    Mnist {
        /// Directory holding the four IDX files.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "SLOWCAL_OUT_DIR")]
        out: Option<PathBuf>,
    },
}

fn load(path: &PathBuf) -> Result<ExperimentSpec, ExitCode> {
    ExperimentSpec::load(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_CONFIG)
    })
}

fn summarize(report: &ExperimentReport) -> ExitCode {
    for w in &report.manifest.warnings {
        eprintln!("warning: {w}");
    }
    for eta in &report.manifest.etas {
        let finals: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| {
                r.algorithm == eta.algorithm.name()
                    && r.machines == eta.machines
                    && r.local_steps == eta.local_steps
                    && r.round + 1 == eta.rounds as u64
            })
            .map(|r| r.excess_loss)
            .collect();
        let mean = finals.iter().sum::<f64>() / finals.len().max(1) as f64;
        println!(
            "{:<15} M={:<4} K={:<4} R={:<5} eta={:<11.4e} ({}) final excess loss {:.4e}",
            eta.algorithm.name(),
            eta.machines,
            eta.local_steps,
            eta.rounds,
            eta.eta,
            eta.source,
            mean
        );
    }
    for row in &report.eval {
        println!(
            "{:<22} test loss {:.4} accuracy {:.4}",
            row.run_id, row.test_loss, row.test_accuracy
        );
    }
    println!("wrote {}", report.out_dir.display());
    if report.any_diverged() {
        eprintln!("diverged runs: {}", report.manifest.diverged_runs.join(", "));
        ExitCode::from(EXIT_DIVERGED)
    } else {
        ExitCode::SUCCESS
    }
}

fn execute(spec: &ExperimentSpec, out: &PathBuf) -> ExitCode {
    match runner::sweep(spec, out) {
        Ok(report) => summarize(&report),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not size thread pool: {e}");
        }
    }
    match cli.command {
        Command::Run { config, out } => {
            let spec = match load(&config) {
                Ok(s) => s,
                Err(code) => return code,
            };
            let out = out.unwrap_or_else(|| spec.out_dir.clone());
            execute(&spec, &out)
        }
        Command::Sweep { config, out } => match load(&config) {
            Ok(spec) => execute(&spec, &out),
            Err(code) => code,
        },
        Command::Verify => match verify_suite() {
            Ok(report) => {
                println!("{report}");
                if report.all_passed() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(EXIT_VERIFY)
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_VERIFY)
            }
        },
        Command::Mnist { data, config, out } => {
            let mut spec = match load(&config) {
                Ok(s) => s,
                Err(code) => return code,
            };
            spec.problem = ProblemKind::MnistLogistic;
            spec.data_dir = Some(data);
            if let Err(e) = spec.validate() {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_CONFIG);
            }
            let out = out.unwrap_or_else(|| spec.out_dir.clone());
            execute(&spec, &out)
        }
    }
}
