use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use critical_affine::acceptance::{self, Budget};
use critical_affine::experiment::{self, ExperimentConfig, ExperimentKind, EXIT_ACCEPTANCE, EXIT_OK};

/// Simulation lab for random affine recursions in the critical case.
#[derive(Parser, Debug)]
#[command(name = "affrec", version)]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run { config: PathBuf },
    /// Run the acceptance criteria and print one line per criterion.
    Acceptance {
        #[arg(long, default_value_t = acceptance::DEFAULT_SEED)]
        seed: u64,
        /// Smaller budgets; much faster, same tolerances.
        #[arg(long)]
        quick: bool,
        /// Only these criteria (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
    /// List the experiment kinds accepted in configs.
    ListExperiments,
    /// Print the config format as JSON.
    PrintSchema,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config } => run(&config, cli.workers),
        Command::Acceptance { seed, quick, only } => {
            let budget = if quick { Budget::Quick } else { Budget::Full };
            let ctx = acceptance::Context::new(seed, budget, cli.workers.unwrap_or(1));
            let ids: Vec<u8> = if only.is_empty() {
                acceptance::CRITERIA.iter().map(|c| c.0).collect()
            } else {
                only
            };
            if let Some(bad) = ids.iter().find(|i| !(1..=11).contains(*i)) {
                eprintln!("error: no criterion {bad}");
                return ExitCode::from(experiment::EXIT_CONFIG as u8);
            }
            let summary = acceptance::run_selected(&ids, &ctx, |r| println!("{r}"));
            let passed = summary.criteria.iter().filter(|c| c.passed).count();
            println!("{passed} of {} criteria passed", summary.criteria.len());
            if summary.passed() {
                EXIT_OK
            } else {
                EXIT_ACCEPTANCE
            }
        }
        Command::ListExperiments => {
            for k in ExperimentKind::ALL {
                println!("{:<16} {}", k.name(), k.description());
            }
            EXIT_OK
        }
        Command::PrintSchema => {
            println!(
                "{}",
                serde_json::to_string_pretty(&experiment::config_schema()).expect("schema serializes")
            );
            EXIT_OK
        }
    };
    ExitCode::from(code as u8)
}

fn run(path: &std::path::Path, workers: Option<usize>) -> i32 {
    let mut config = match ExperimentConfig::from_path(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return experiment::exit_code(&e);
        }
    };
    if let Some(w) = workers {
        config.workers = w.max(1);
    }
    match experiment::run(&config) {
        Ok(outcome) => {
            for v in &outcome.report.verdicts {
                println!("{}: {}", v.name, v.outcome);
            }
            for e in &outcome.report.estimates {
                println!("{} = {:.6e} (stderr {:.2e})", e.name, e.estimate.point, e.estimate.stderr);
            }
            println!("report: {}", outcome.report_path.display());
            for p in &outcome.csv_paths {
                println!("samples: {}", p.display());
            }
            outcome.report.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            experiment::exit_code(&e)
        }
    }
}
