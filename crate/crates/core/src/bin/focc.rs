//! `focc` command-line interface.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or configuration error,
//! 3 numeric divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use focc::check::{run_suite, Level};
use focc::config::{RunConfig, SweepParam};
use focc::experiment::{run, sweep, sweep_csv};
use focc::Error;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "focc", version, about = "Streaming transducer likelihoods with forward-variable causal compensation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the oracle, gradient, isolation, flow, causality and decoder suites.
    Check {
        #[arg(long, value_enum, default_value = "fast")]
        level: Level,
        /// Also write the JSON summary here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Train every seed of a run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train once per value of one hyperparameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// lambda_gamma, lambda_chi, chunk_size (C) or horizon (h).
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
    },
}

fn exit_for(err: &Error) -> u8 {
    match err {
        Error::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_USAGE,
    }
}

fn load(path: &std::path::Path) -> Result<RunConfig, ExitCode> {
    RunConfig::load(path).map_err(|e| {
        eprintln!("focc: cannot use config {}: {e}", path.display());
        eprintln!("usage: focc train --config <path>");
        ExitCode::from(EXIT_USAGE)
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Check { level, json } => {
            let report = run_suite(level, None);
            print!("{}", report.human());
            let summary = serde_json::to_string_pretty(&report).expect("report serializes");
            match json {
                Some(path) => {
                    if let Err(e) = std::fs::write(&path, summary) {
                        eprintln!("focc: cannot write {}: {e}", path.display());
                        return ExitCode::from(EXIT_USAGE);
                    }
                }
                None => println!("{summary}"),
            }
            if report.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("failing properties: {}", report.failing().join(", "));
                ExitCode::from(EXIT_CHECK_FAILED)
            }
        }
        Command::Train { config } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match run(&cfg, Some(&cfg.output_dir)) {
                Ok(summary) => {
                    for s in &summary.seeds {
                        println!("seed {}: test token error rate {:.4}", s.seed, s.test_token_error_rate);
                    }
                    println!("median test token error rate {:.4}", summary.median_test_token_error_rate());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("focc: {e}");
                    ExitCode::from(exit_for(&e))
                }
            }
        }
        Command::Sweep { config, param, values } => {
            let param = match SweepParam::parse(&param) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("focc: {e}");
                    return ExitCode::from(EXIT_USAGE);
                }
            };
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match sweep(&cfg, param, &values, Some(&cfg.output_dir)) {
                Ok(rows) => {
                    print!("{}", sweep_csv(param, &rows));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("focc: {e}");
                    ExitCode::from(exit_for(&e))
                }
            }
        }
    }
}
