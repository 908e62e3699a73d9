//! Batch front-end for `ifslab-core`.
//!
//! A run reads a TOML config, resolves every default, executes one
//! subcommand and writes its outputs together with `resolved.toml`.
//! Failures are reported as a JSON object on stderr and mapped to exit
//! codes: 2 config, 3 precision, 4 resource cap, 5 invariant violation.

pub mod commands;
pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use ifslab_core::error::{LabError, Result};

pub use commands::{execute, Artifact, CommandKind};
pub use config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Similarity dimension over a parameter grid.
    Dimension,
    /// Finite-depth pressure curves.
    Pressure,
    /// Dimension, cover and density verdicts per parameter.
    Scan,
    /// Parameter measure of near collisions between coded pairs.
    Transversality,
    /// Monte Carlo density integral over a parameter ball.
    DensityIntegral,
    /// Induced jet system report.
    Jets,
    /// Planar blender end-to-end report.
    BlenderDemo,
}

impl From<Command> for CommandKind {
    fn from(c: Command) -> Self {
        match c {
            Command::Dimension => CommandKind::Dimension,
            Command::Pressure => CommandKind::Pressure,
            Command::Scan => CommandKind::Scan,
            Command::Transversality => CommandKind::Transversality,
            Command::DensityIntegral => CommandKind::DensityIntegral,
            Command::Jets => CommandKind::Jets,
            Command::BlenderDemo => CommandKind::BlenderDemo,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ifslab", version, about = "Numerical laboratory for parameterized IFS and unipotent skew-products")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; results go to stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Restrict outputs to one format; both are written by default.
    #[arg(long, global = true)]
    pub format: Option<Format>,
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
    RunConfig::from_toml(&text)
}

/// Runs a command on a config and returns the resolved config and the
/// artifacts allowed by `format`, with `resolved.toml` first.
pub fn run(command: Command, mut cfg: RunConfig, seed: Option<u64>, format: Option<Format>) -> Result<Vec<Artifact>> {
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let (resolved, artifacts) = execute(command.into(), cfg)?;
    let mut out = vec![Artifact { name: "resolved.toml".into(), contents: resolved.to_toml()? }];
    out.extend(artifacts.into_iter().filter(|a| match format {
        None => true,
        Some(Format::Csv) => a.name.ends_with(".csv"),
        Some(Format::Json) => a.name.ends_with(".json"),
    }));
    // commands without a table still emit their report
    if out.len() == 1 {
        return Err(LabError::Config(format!("{command:?} has no output in the requested format")));
    }
    Ok(out)
}

pub fn error_json(e: &LabError) -> String {
    json!({ "error": { "kind": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() } }).to_string()
}

fn write_all(dir: &Path, artifacts: &[Artifact]) -> Result<()> {
    let io = |e: std::io::Error| LabError::Config(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    for a in artifacts {
        fs::write(dir.join(&a.name), &a.contents).map_err(io)?;
    }
    Ok(())
}

/// Full process behavior; returns the exit code.
pub fn main_with(cli: Cli) -> i32 {
    let result = (|| -> Result<()> {
        if let Some(threads) = cli.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global()
                .map_err(|e| LabError::Config(e.to_string()))?;
        }
        let path = cli.config.as_deref().ok_or_else(|| LabError::Config("--config is required".into()))?;
        let cfg = load_config(path)?;
        let artifacts = run(cli.command, cfg, cli.seed, cli.format)?;
        match &cli.out {
            Some(dir) => write_all(dir, &artifacts),
            None => {
                for a in &artifacts[1..] {
                    print!("{}", a.contents);
                }
                Ok(())
            }
        }
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            if let Some(dir) = &cli.out {
                let _ = fs::create_dir_all(dir).and_then(|_| fs::write(dir.join("error.json"), error_json(&e) + "\n"));
            }
            e.exit_code()
        }
    }
}
