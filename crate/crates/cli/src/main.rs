use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfrw_cli::gendata::gen_data;
use mfrw_cli::report::report;
use mfrw_cli::run::run;
use mfrw_cli::sweep::{sweep, SweepSpec};
use mfrw_cli::{load_config, CliError};
use mfrw_core::metaloop::Method;

#[derive(Parser)]
#[command(
    name = "mfrw",
    version,
    about = "Meta feature re-weighting experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics.csv and summary.txt.
    Run { config: PathBuf },
    /// Run every (method, p, seed) cell and aggregate into table.csv.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<Method>,
        #[arg(long, value_delimiter = ',', required = true)]
        noise: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
    },
    /// Plot the metrics of one or more run directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Write the prepared datasets and transition matrix as CSV.
    GenData { config: PathBuf },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config } => {
            let out = run(&load_config(&config)?)?;
            println!(
                "{}: final test accuracy {:.4} ({})",
                out.summary.method.name(),
                out.summary.final_test_accuracy,
                out.out_dir.display()
            );
        }
        Command::Sweep {
            config,
            methods,
            noise,
            seeds,
        } => {
            let out = sweep(
                &load_config(&config)?,
                &SweepSpec {
                    methods,
                    noise,
                    seeds,
                },
            )?;
            print!("{}", out.table.render());
            for c in out.cells.iter().filter(|c| c.result.is_err()) {
                eprintln!(
                    "cell {}: {}",
                    c.out_dir.display(),
                    c.result.as_ref().unwrap_err()
                );
            }
            if out.failed() > 0 {
                return Err(CliError::SweepFailed {
                    failed: out.failed(),
                    total: out.cells.len(),
                });
            }
        }
        Command::Report { dirs, out } => {
            let r = report(&dirs, &out)?;
            print!("{}", r.text);
        }
        Command::GenData { config } => {
            let out = gen_data(&load_config(&config)?)?;
            print!("{}", out.summary);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
