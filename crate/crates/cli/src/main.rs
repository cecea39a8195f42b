use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mnl_bandit::harness::{
    exit_code, parse_config, run_experiment, summarize_trace_files, write_summary_csv, TraceGranularity, THREADS_ENV,
};
use mnl_bandit::MnlError;

/// Contextual MNL bandit experiments.
#[derive(Parser)]
#[command(name = "mnl-bandit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every algorithm in a config and write traces, summary and manifest.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for replications. Falls back to the config, then
        /// to the MNL_BANDIT_THREADS environment variable.
        #[arg(long)]
        threads: Option<usize>,
        /// Keep every n-th round in the traces.
        #[arg(long)]
        trace_every: Option<usize>,
    },
    /// Print a summary table for trace CSV files matching a glob.
    Summarize { pattern: String },
    /// Parse and validate a config, printing the resolved spec.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn threads_from_env() -> Result<Option<usize>, MnlError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| MnlError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn execute(command: Command) -> Result<(), MnlError> {
    match command {
        Command::Run { config, out, threads, trace_every } => {
            let mut spec = parse_config(&config)?;
            if let Some(out) = out {
                spec.output_dir = out;
            }
            if threads.is_some() {
                spec.threads = threads;
            } else if spec.threads.is_none() {
                spec.threads = threads_from_env()?;
            }
            if let Some(n) = trace_every {
                spec.trace = TraceGranularity::from_every(n)?;
            }
            let report = run_experiment(&spec)?;
            write_summary_csv(io::stdout().lock(), &report.summaries)?;
            log::info!("outputs written to {}", spec.output_dir.display());
            Ok(())
        }
        Command::Summarize { pattern } => {
            let paths: Vec<PathBuf> = glob::glob(&pattern)
                .map_err(|e| MnlError::Config(format!("bad glob `{pattern}`: {e}")))?
                .collect::<Result<_, _>>()
                .map_err(|e| MnlError::Io(e.to_string()))?;
            if paths.is_empty() {
                return Err(MnlError::Config(format!("no files match `{pattern}`")));
            }
            let summaries = summarize_trace_files(&paths)?;
            write_summary_csv(io::stdout().lock(), &summaries)
        }
        Command::Validate { config } => {
            let spec = parse_config(&config)?;
            println!("{}", spec.to_json());
            Ok(())
        }
    }
}
