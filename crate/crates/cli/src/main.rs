use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fbsde_cli::study::{run_study, validate_report, write_moments, RunOptions};
use fbsde_cli::{init_threads, CliError, StudyConfig};

/// Convergence studies for shot-noise truncated Lévy-driven FBSDEs.
#[derive(Parser)]
#[command(version, about)]
struct Args {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Run every (n, N) cell and write the ledger, tables and manifest.
    Run {
        config: PathBuf,
        /// Also write this many forward paths per cell.
        #[arg(long, default_value_t = 0)]
        dump_paths: usize,
    },
    /// Write the truncation moment table.
    Moments { config: PathBuf },
    /// Check the configuration and the structural assumptions.
    Validate { config: PathBuf },
}

fn run(args: Args) -> Result<(), CliError> {
    match args.verb {
        Verb::Run { config, dump_paths } => {
            let study = StudyConfig::load(&config)?;
            init_threads()?;
            let outcome = run_study(&study, RunOptions { dump_paths })?;
            for path in &outcome.outputs {
                println!("wrote {}", path.display());
            }
            let failed = outcome.failed();
            if failed > 0 {
                for r in outcome.rows.iter().filter(|r| r.status != "ok") {
                    eprintln!("cell n={} N={} failed: {}", r.n, r.steps, r.message);
                }
                return Err(CliError::CellsFailed {
                    failed,
                    cells: outcome.rows.len(),
                });
            }
        }
        Verb::Moments { config } => {
            let study = StudyConfig::load(&config)?;
            init_threads()?;
            println!("wrote {}", write_moments(&study)?.display());
        }
        Verb::Validate { config } => {
            let study = StudyConfig::load(&config)?;
            print!("{}", validate_report(&study)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
