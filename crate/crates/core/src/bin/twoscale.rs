use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use twoscale::Error;
use twoscale::harness::{self, ExperimentConfig, OracleKind, Scope};

#[derive(Parser)]
#[command(name = "twoscale", version, about = "Two-time-scale stochastic approximation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the replications described by a config file and write CSVs plus a report.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the property suite for one module or all of them.
    Props {
        #[arg(long, default_value = "all")]
        scope: String,
        /// Transition kernel file to validate and include in the Markov-chain checks.
        #[arg(long)]
        chain: Option<PathBuf>,
    },
    /// Fit log-log slopes to the mean columns of a summary CSV.
    Rate {
        #[arg(long = "in")]
        input: PathBuf,
        /// Checkpoint window as `LO:HI`.
        #[arg(long)]
        window: String,
    },
    /// Solve a model file exactly.
    Oracle {
        #[command(subcommand)]
        which: OracleCmd,
    },
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Optimal average cost and relative Q-values of an MDP.
    Avgcost {
        #[arg(long)]
        model: PathBuf,
    },
    /// Optimal discounted Q-values of an MDP.
    Discounted {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        gamma: f64,
    },
    /// Generalized Nash equilibrium and multipliers of a quadratic game.
    Kkt {
        #[arg(long)]
        model: PathBuf,
    },
}

const EXIT_PROPERTY: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Replication { source, .. } => exit_code(source),
        Error::NonFiniteIterate { .. } | Error::SolverDiverged(_) | Error::NotContracting { .. } | Error::NoConvergence(_) => {
            EXIT_DIVERGED
        }
        _ => EXIT_CONFIG,
    }
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(&e))
}

fn parse_window(s: &str) -> Result<(usize, usize), Error> {
    let bad = || Error::Config { field: "window".into(), reason: format!("expected LO:HI, got `{s}`") };
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    if lo >= hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            match harness::run_experiment(&cfg) {
                Ok(report) => {
                    print!("{}", report.to_text());
                    for f in &report.files {
                        eprintln!("wrote {}", f.display());
                    }
                    if report.checks.iter().all(|c| c.passed) { ExitCode::SUCCESS } else { ExitCode::from(EXIT_PROPERTY) }
                }
                Err(e) => fail(e),
            }
        }
        Command::Props { scope, chain } => {
            let scope: Scope = match scope.parse() {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            let outcomes = harness::run_property_suite(scope, chain.as_deref());
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            for o in &outcomes {
                if !o.passed {
                    println!("{o}");
                }
            }
            println!("{} checks, {} passed, {failed} failed", outcomes.len(), outcomes.len() - failed);
            if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(EXIT_PROPERTY) }
        }
        Command::Rate { input, window } => {
            let window = match parse_window(&window) {
                Ok(w) => w,
                Err(e) => return fail(e),
            };
            match harness::rate_report(&input, window) {
                Ok((fits, path)) => {
                    println!("{}", twoscale::engine::RateFit::CSV_HEADER);
                    for (name, f) in &fits {
                        println!("{}", f.csv_row(name));
                    }
                    eprintln!("wrote {}", path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Oracle { which } => {
            let (kind, model) = match which {
                OracleCmd::Avgcost { model } => (OracleKind::AvgCost, model),
                OracleCmd::Discounted { model, gamma } => (OracleKind::Discounted { gamma }, model),
                OracleCmd::Kkt { model } => (OracleKind::Kkt, model),
            };
            match harness::oracle_report(kind, &model) {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
    }
}
