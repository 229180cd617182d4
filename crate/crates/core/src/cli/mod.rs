//! Command-line front end: argument parsing, config layering and artifact output.

pub mod config;
mod ablate;
mod fit;
mod out;
mod spectrum;
mod toy;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

/// Exit code for usage and configuration errors.
pub const EXIT_USAGE: u8 = 2;
/// Exit code when a run aborts on a non-finite loss.
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{failed} of {total} grid cells failed")]
    CellsFailed {
        failed: usize,
        total: usize,
        numerical: bool,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::CellsFailed { numerical: true, .. } => EXIT_NUMERICAL,
            CliError::CellsFailed { .. } => 1,
        }
    }
}

/// Map a library error to a process exit code.
pub fn lib_exit_code(e: &splatlab::Error) -> u8 {
    use splatlab::Error::*;
    match e {
        NonFiniteLoss { .. } => EXIT_NUMERICAL,
        Io(_) => 1,
        _ => EXIT_USAGE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "splatlab", version, about = "CPU Gaussian-splatting optimization lab")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Base RNG seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run all parallel work on one thread. Results are order-fixed either way.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// TOML (or `.json`) file with `target` and `[train]`, `[grid]`, `[toy]` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit Gaussians to a target image.
    Fit(fit::FitArgs),
    /// Run the 1D mixture regression toy.
    Toy1d(toy::ToyArgs),
    /// Run an init × schedule (× count) grid.
    Ablate(ablate::AblateArgs),
    /// Compare one scanline spectrum of two images.
    Spectrum(spectrum::SpectrumArgs),
}

const FILE_KEYS: [&str; 4] = ["target", "train", "grid", "toy"];

/// The parsed config file, split into its sections.
#[derive(Debug, Default)]
pub struct FileConfig {
    pub target: Option<PathBuf>,
    sections: Map<String, Value>,
}

impl FileConfig {
    pub fn load(path: Option<&std::path::Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let Value::Object(mut map) = config::load_file(path)? else {
            return Err(CliError::Usage("config file must contain a table at the top level".into()));
        };
        if let Some(k) = map.keys().find(|k| !FILE_KEYS.contains(&k.as_str())) {
            return Err(CliError::Usage(format!(
                "config error at `{k}`: unknown key (expected one of {})",
                FILE_KEYS.join(", ")
            )));
        }
        let target = match map.remove("target") {
            None => None,
            Some(Value::String(s)) => Some(PathBuf::from(s)),
            Some(_) => return Err(CliError::Usage("config error at `target`: expected a path string".into())),
        };
        Ok(Self { target, sections: map })
    }

    pub fn section(&self, name: &str) -> Option<Value> {
        self.sections.get(name).cloned()
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.global.deterministic {
        // Ignore failure: the pool may already be initialized in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    let file = FileConfig::load(cli.global.config.as_deref())?;
    match cli.command {
        Command::Fit(a) => fit::run(&cli.global, &file, a),
        Command::Toy1d(a) => toy::run(&cli.global, &file, a),
        Command::Ablate(a) => ablate::run(&cli.global, &file, a),
        Command::Spectrum(a) => spectrum::run(&cli.global, a),
    }
}
