use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tta_reset_cli::compare::{compare, render};
use tta_reset_cli::config::ExperimentConfig;
use tta_reset_cli::experiment::{run_experiment, OUTPUT_ROOT_ENV};
use tta_reset_cli::plot::{render_svg, Quantity};
use tta_reset_cli::record::{self, LoadedRecord};
use tta_reset_cli::{CliError, Result};

#[derive(Parser)]
#[command(name = "tta-reset", version, about = "Long-term test-time adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (strategy, seed) pair of a config and write records.
    Run {
        config: PathBuf,
        /// Overrides `run.workers`.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Rank records from the same stream by mean accuracy.
    Compare {
        #[arg(required = true, num_args = 2..)]
        files: Vec<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        final_window: usize,
    },
    /// Chart one logged quantity across records, marking resets.
    Plot {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        quantity: String,
        /// Defaults to `<quantity>.svg` under the output root.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output_root() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from)
}

fn load_all(files: &[PathBuf]) -> Result<Vec<LoadedRecord>> {
    files.iter().map(|f| record::load(f)).collect()
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config, workers } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(w) = workers {
                config.run.workers = w;
            }
            let out = run_experiment(&config, output_root().as_deref())?;
            println!("{} records, summary at {}", out.record_files.len(), out.summary_file.display());
            print!("{}", String::from_utf8_lossy(&std::fs::read(&out.summary_file).map_err(|e| CliError::io(&out.summary_file, e))?));
        }
        Command::Compare { files, final_window } => {
            let rows = compare(&load_all(&files)?, final_window)?;
            print!("{}", render(&rows));
        }
        Command::Plot { files, quantity, out } => {
            let quantity: Quantity = quantity.parse()?;
            let records = load_all(&files)?;
            let out = out.unwrap_or_else(|| {
                let name = PathBuf::from(format!("{}.svg", quantity.column()));
                output_root().map_or(name.clone(), |root| root.join(name))
            });
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
            }
            std::fs::write(&out, render_svg(&records, quantity)).map_err(|e| CliError::io(&out, e))?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
