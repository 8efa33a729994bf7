//! Configuration-driven experiment runner.
//!
//! A JSON config names a command, a model file and the command parameters;
//! the command writes `<command>.csv` and `<command>.report.txt` into the
//! output directory.

mod commands;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde::de::DeserializeOwned;
use serde_json::Value;
use thiserror::Error;

use crate::model::ModelSpec;

pub use commands::{Command, CommandRegistry};

#[derive(Debug, Parser)]
#[command(name = "stablereg", about = "Transition densities of locally stable jump processes")]
pub struct Args {
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for CSV and report artifacts.
    #[arg(long, default_value = ".")]
    pub output: PathBuf,
    /// Overrides the seed of randomized commands.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Caps the number of worker threads.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Replaces simulated distances by `t^VALUE` in `scaling` (testing hook).
    #[arg(long)]
    pub synthetic_inject: Option<f64>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Module(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Module(_) => 1,
        }
    }
}

pub(crate) fn module_err(e: impl std::fmt::Display) -> CliError {
    CliError::Module(e.to_string())
}

/// Everything a command needs besides its own parameters.
pub struct Context {
    pub config: Value,
    pub config_dir: PathBuf,
    pub seed: Option<u64>,
    pub synthetic_inject: Option<f64>,
}

impl Context {
    /// Command parameters; unknown keys are ignored.
    pub fn params<T: DeserializeOwned>(&self) -> Result<T, CliError> {
        serde_json::from_value(self.config.clone()).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn model(&self) -> Result<ModelSpec, CliError> {
        let rel = self
            .config
            .get("model")
            .and_then(Value::as_str)
            .ok_or_else(|| CliError::Config("missing \"model\" path".into()))?;
        let path = self.config_dir.join(rel);
        if !path.exists() {
            return Err(CliError::Config(format!("model file {} not found", path.display())));
        }
        ModelSpec::load(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Artifacts of one command run.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub csv: String,
    pub report: String,
    /// `false` turns a completed run into exit status 1.
    pub passed: bool,
}

fn usage(registry: &CommandRegistry) -> String {
    let mut s = String::from("commands:\n");
    for (name, about) in registry.names() {
        s.push_str(&format!("  {name:<16} {about}\n"));
    }
    s
}

/// Runs the configured command and writes its artifacts.
pub fn run(args: &Args) -> Result<Outcome, CliError> {
    let registry = CommandRegistry::standard();
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let config: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let name = config
        .get("command")
        .and_then(Value::as_str)
        .ok_or_else(|| CliError::Config(format!("missing \"command\"\n{}", usage(&registry))))?
        .to_string();
    let command = registry
        .get(&name)
        .ok_or_else(|| CliError::Config(format!("unknown command {name:?}\n{}", usage(&registry))))?;
    if let Some(n) = args.workers {
        // fails only when a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let ctx = Context {
        config,
        config_dir: args.config.parent().map(Path::to_path_buf).unwrap_or_default(),
        seed: args.seed,
        synthetic_inject: args.synthetic_inject,
    };
    let outcome = command.run(&ctx)?;
    fs::create_dir_all(&args.output).map_err(module_err)?;
    fs::write(args.output.join(format!("{name}.csv")), &outcome.csv).map_err(module_err)?;
    fs::write(args.output.join(format!("{name}.report.txt")), &outcome.report).map_err(module_err)?;
    Ok(outcome)
}

pub fn main_with(args: Args) -> ExitCode {
    match run(&args) {
        Ok(o) => {
            print!("{}", o.report);
            if o.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
