mod commands;
mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use serde_json::json;

use commands::{
    ArapArgs, BenchArgs, GenDataArgs, HierarchyArgs, InterpolateArgs, RetrieveArgs, TrainArgs, TransferArgs,
};

#[derive(Parser)]
#[command(name = "shapepose", about = "Shape/pose disentanglement for registered meshes")]
struct Cli {
    /// JSON object supplying any flag of the subcommand; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic articulated-creature dataset with ground-truth factors.
    GenData(GenDataArgs),
    /// Build (or reuse) the cached mesh hierarchy for a dataset template.
    BuildHierarchy(HierarchyArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Deform a source mesh toward a target with anchored ARAP.
    ArapDeform(ArapArgs),
    /// Combine the shape of one mesh with the pose of another.
    Transfer(TransferArgs),
    /// Nearest dataset meshes to a query in shape or pose code space.
    Retrieve(RetrieveArgs),
    /// Decode a linear path between two meshes in one code.
    Interpolate(InterpolateArgs),
    /// Run the evaluation benchmark on a dataset with known factors.
    Bench(BenchArgs),
}

fn long_version() -> String {
    format!(
        "{} (config schema {})",
        shapepose_core::TOOL_VERSION,
        shapepose_core::CONFIG_SCHEMA_VERSION
    )
}

/// Failure reported as one JSON line on standard error.
#[derive(Debug)]
pub struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl fmt::Display) -> Self {
        Self {
            kind,
            message: message.to_string(),
        }
    }

    pub fn usage(message: impl fmt::Display) -> Self {
        Self::new("usage", message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }
}

macro_rules! error_kinds {
    ($($ty:ty => $kind:literal),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                Self::new($kind, e)
            }
        })*
    };
}

error_kinds! {
    shapepose_core::MeshError => "mesh",
    shapepose_core::ArapError => "arap",
    shapepose_core::MultiresError => "hierarchy",
    shapepose_core::NnError => "checkpoint",
    shapepose_core::SpiralError => "model",
    shapepose_core::TrainError => "train",
    shapepose_core::EvalError => "eval",
}

fn main() -> ExitCode {
    let parsed = Cli::command()
        .version(long_version())
        .try_get_matches()
        .and_then(|m| Cli::from_arg_matches(&m));
    let cli = match parsed {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // help and version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("{}", json!({ "error": "usage", "message": first }));
            return ExitCode::FAILURE;
        }
    };
    let result = config::load(cli.config.as_deref()).and_then(|values| {
        let cfg = commands::Context {
            config_path: cli.config.clone(),
            values,
        };
        let cfg = &cfg;
        match &cli.command {
            Command::GenData(a) => commands::gen_data(a, cfg),
            Command::BuildHierarchy(a) => commands::build_hierarchy(a, cfg),
            Command::Train(a) => commands::train(a, cfg),
            Command::ArapDeform(a) => commands::arap_deform(a, cfg),
            Command::Transfer(a) => commands::transfer(a, cfg),
            Command::Retrieve(a) => commands::retrieve(a, cfg),
            Command::Interpolate(a) => commands::interpolate(a, cfg),
            Command::Bench(a) => commands::bench(a, cfg),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind, "message": e.message }));
            ExitCode::FAILURE
        }
    }
}
