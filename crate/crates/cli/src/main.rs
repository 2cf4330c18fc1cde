mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use synthimg_core::Error;

use crate::commands::CompareRequest;
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "synthimg", version, about = "Abundance tables to synthetic images and CNN classifiers")]
struct Cli {
    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON config with the same keys as the flags; a run manifest also works
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: RunConfig,
}

impl RunArgs {
    fn resolve(self) -> synthimg_core::Result<RunConfig> {
        let base = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        Ok(base.overlay(&self.flags))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Log-scale histograms of the non-zero abundances of each table
    Hist {
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        labels: Vec<PathBuf>,
        #[arg(long, default_value_t = 4.0)]
        base: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Render every sample as an image
    Render(RunArgs),
    /// Train one model on the whole table and export its weights
    Train(RunArgs),
    /// Repeated stratified cross-validation
    Cv(RunArgs),
    /// Fit on one table, score another once
    External(RunArgs),
    /// One-tailed Welch tests of a summary against a published baseline
    Compare {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        baseline: String,
        #[arg(long)]
        baseline_sd: Option<f64>,
        #[arg(long)]
        baseline_n: Option<usize>,
        /// Dataset key in the baseline table (default: each row's dataset)
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        e if e.is_data_error() => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Hist { data, labels, base, out } => commands::hist(&data, &labels, base, &out),
        Command::Render(a) => a.resolve().and_then(|c| commands::render(&c)),
        Command::Train(a) => a.resolve().and_then(|c| commands::train(&c)),
        Command::Cv(a) => a.resolve().and_then(|c| commands::cv(&c)),
        Command::External(a) => a.resolve().and_then(|c| commands::external(&c)),
        Command::Compare {
            summary,
            baseline,
            baseline_sd,
            baseline_n,
            dataset,
            out,
        } => commands::compare_cmd(&CompareRequest {
            summary,
            baseline,
            baseline_sd,
            baseline_n,
            dataset,
            out,
        }),
    };
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
