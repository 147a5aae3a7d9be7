//! `misp` command-line driver.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use misp::MispError;

#[derive(Parser)]
#[command(name = "misp", version, about = "Spatial monotone snow-density curves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Caps worker threads.
    #[arg(long, env = "MISP_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model; writes samples.csv, summary.csv and manifest.json.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Measurement CSV.
        #[arg(long)]
        data: PathBuf,
    },
    /// Predict curves from fitted samples; writes curves.csv.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// samples.csv from `fit`.
        #[arg(long)]
        samples: PathBuf,
    },
    /// Grouped cross-validation; writes cv_report.csv.
    Cv {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Further configurations to score against the primary one.
        #[arg(long)]
        compare: Vec<PathBuf>,
    },
    /// Generate a synthetic dataset; writes data.csv and truth.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// R-hat and ESS of a samples file; writes diagnostics.csv and trace.csv.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: PathBuf,
    },
}

fn exit_code(e: &MispError) -> u8 {
    match e {
        MispError::Config(_) => 2,
        MispError::Validation(_) => 3,
        MispError::Input(_) => 4,
        MispError::Domain(_) => 5,
        MispError::Index(_) => 6,
        MispError::Numerical(_) => 7,
        MispError::Plan(_) => 8,
        MispError::Sampler(_) => 9,
        MispError::Io(_) => 10,
        MispError::Csv(_) => 11,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit { common, data } => commands::fit(&common, &data),
        Command::Predict { common, data, samples } => commands::predict(&common, &data, &samples),
        Command::Cv { common, data, compare } => commands::cv(&common, &data, &compare),
        Command::Simulate { common } => commands::simulate(&common),
        Command::Diagnose { common, samples } => commands::diagnose(&common, &samples),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
