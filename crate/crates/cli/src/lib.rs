//! Command-line driver for the `ipsrec` pipeline.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{execute, replay, run_recorded, Command};
pub use config::RunConfig;
pub use error::CliError;
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "ipsrec", version, about = "Counterfactual training and off-policy evaluation of recommenders")]
pub struct Cli {
    /// Flat TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// `key=value` config override; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub action: Action,
}

#[derive(Debug, Subcommand)]
pub enum Action {
    #[command(flatten)]
    Run(Command),
    /// Re-run a recorded manifest and verify its outputs.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
    },
}

/// Parses and runs; returns the manifest of the completed run.
pub fn run(cli: &Cli) -> Result<RunManifest, CliError> {
    if cli.threads == Some(0) {
        return Err(CliError::usage("threads", "must be at least 1"));
    }
    match &cli.action {
        Action::Run(cmd) => {
            let mut cfg = RunConfig::resolve(cli.config.as_deref(), &cli.overrides, cli.seed)?;
            cmd.apply_flags(&mut cfg)?;
            run_recorded(cmd, &cfg, &cli.out_dir, cli.threads)
        }
        Action::Replay { manifest } => replay(manifest, &cli.out_dir, cli.threads),
    }
}

/// Full entry point: returns the process exit code. Errors are printed to
/// stderr as a single JSON line.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let err = CliError::usage("arguments", e.to_string().lines().next().unwrap_or("").to_string());
            eprintln!("{}", err.to_json_line());
            return 2;
        }
    };
    match run(&cli) {
        Ok(m) => {
            println!(
                "{}: wrote {} file(s) to {}",
                m.command.name(),
                m.outputs.len() + 1,
                cli.out_dir.display()
            );
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.exit_code()
        }
    }
}
