//! `meshderiv`: generate data, check stencils, train, roll out, evaluate.

mod config;
mod eval;
mod gen;
mod rollout;
mod stencil;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Core(#[from] meshderiv::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Core(e) if invalid_input(e) => 2,
            Self::Core(_) | Self::Failed(_) => 1,
        }
    }
}

/// Errors caused by the arguments or input files rather than by a run.
fn invalid_input(e: &meshderiv::Error) -> bool {
    use meshderiv::Error as E;
    matches!(
        e,
        E::InvalidArgument(_)
            | E::Config(_)
            | E::Format(_)
            | E::IsolatedNode { .. }
            | E::UnderdeterminedGradient { .. }
            | E::UnderdeterminedLaplacian { .. }
    )
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "meshderiv", version, about = "Meshless operators and learned PDE surrogates")]
struct Cli {
    /// Plain-text `key = value` file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate ground-truth trajectories.
    Gen(gen::GenArgs),
    /// Verify MLS exactness and invariances on random meshes.
    StencilCheck(stencil::StencilArgs),
    /// Train the learned operator.
    Train(train::TrainArgs),
    /// Roll a checkpoint out from the initial frames of a dataset.
    Rollout(rollout::RolloutArgs),
    /// Score predictions against ground truth.
    Eval(eval::EvalArgs),
}

/// Thread pool for `--jobs`; output order never depends on it.
pub fn pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(CliError::Config("jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Failed(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = cli.config.as_deref();
    let result = match cli.command {
        Command::Gen(a) => gen::run(a, cfg),
        Command::StencilCheck(a) => stencil::run(a, cfg),
        Command::Train(a) => train::run(a, cfg),
        Command::Rollout(a) => rollout::run(a, cfg),
        Command::Eval(a) => eval::run(a, cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
