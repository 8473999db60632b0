//! `wqed <subcommand> --config <file.json> --out <dir> [--seed <u64>]`
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 fit did not converge (the partial result is still written).

mod commands;
mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{Block, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "output failed: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "wqed",
    version,
    about = "Single-photon transport through a cavity with a two-level atom"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Transmission, reflection and excitation spectra as CSV.
    Spectrum(Common),
    /// Refined maxima and minima of the transmission.
    Extrema(Common),
    /// Propagates a Gaussian packet and reports where it went.
    Evolve(Common),
    /// On/off transmission of the single-photon switch.
    Switch(Common),
    /// Checks the effective atomic loss against an explicit bath.
    ReservoirCheck(Common),
    /// Fits a transmission spectrum.
    Fit(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; falls back to `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", dir.join(name).display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(dir.join(name)).map_err(|e| io(e.error))?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let (block, common) = match &cli.command {
        Command::Spectrum(c) => (Block::Scan, c),
        Command::Extrema(c) => (Block::Extrema, c),
        Command::Evolve(c) => (Block::Packet, c),
        Command::Switch(c) => (Block::Switch, c),
        Command::ReservoirCheck(c) => (Block::Bath, c),
        Command::Fit(c) => (Block::Fit, c),
    };
    let cfg = RunConfig::load(&common.config, block)?;
    let out_dir = common
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| CliError::Config("no output directory (use --out or `output`)".into()))?;
    let seed = common.seed.or(cfg.seed).unwrap_or(0);
    let output = match block {
        Block::Scan => commands::spectrum(&cfg),
        Block::Extrema => commands::extrema(&cfg),
        Block::Packet => commands::evolve_packet(&cfg),
        Block::Switch => commands::switch(&cfg),
        Block::Bath => commands::reservoir_check(&cfg),
        Block::Fit => commands::fit(&cfg, seed),
    }?;
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    for (name, bytes) in &output.files {
        write_atomic(&out_dir, name, bytes)?;
    }
    Ok(!output.unconverged)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("fit did not converge; best result written");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
