//! Command-line driver for the magnetic-control Vlasov–Poisson solver.
//!
//! Every subcommand reads one scenario file, runs inside a rayon pool of
//! the requested size and writes its artifacts to `--out`. Binary files and
//! CSV headers carry the scenario hash and the thread count.

pub mod commands;
pub mod scenario;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;
use vpc_forward::ForwardError;
use vpc_optimize::OptimizeError;
use vpc_sensitivity::SensitivityError;

pub use scenario::{InitialControl, Mode, Scenario};

#[derive(Debug, Parser)]
#[command(name = "vpc", version, about = "Optimal magnetic control of a Vlasov-Poisson plasma")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Scenario JSON file.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Validate and print derived sizes without running.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Seed for the random gradient-check directions.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Particle trajectories and diagnostics.
    Forward,
    /// Costate along the forward run.
    Backward,
    /// Adjoint, tangent and finite-difference directional derivatives.
    Gradcheck,
    /// Projected gradient descent.
    Optimize,
    /// Damped fixed-point iteration on the optimality system.
    Fixedpoint,
    /// Picard iterates for the self-consistent field.
    PicardStudy,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("gradient check failed: {0}")]
    GradientCheck(String),
    #[error("line search stalled after {0} accepted steps")]
    LineSearchStall(usize),
    #[error("fixed-point iteration diverged: residuals {0:?}")]
    FixedPointDiverged(Vec<f64>),
    #[error("Picard iteration did not converge: distances {0:?}")]
    PicardNoConvergence(Vec<f64>),
}

impl CliError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Scenario(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::GradientCheck(_) => 5,
            CliError::LineSearchStall(_) => 6,
            CliError::FixedPointDiverged(_) => 7,
            CliError::PicardNoConvergence(_) => 8,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ForwardError> for CliError {
    fn from(e: ForwardError) -> Self {
        match e {
            ForwardError::PicardNoConvergence(d) => CliError::PicardNoConvergence(d),
            ForwardError::Config(_) | ForwardError::Kernel(_) | ForwardError::EmptyEnsemble => CliError::Scenario(e.to_string()),
            ForwardError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<SensitivityError> for CliError {
    fn from(e: SensitivityError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<OptimizeError> for CliError {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::Invalid { .. } => CliError::Scenario(e.to_string()),
            OptimizeError::Forward(f) => f.into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

/// Parse-independent entry point; returns the lines printed to stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let path = cli.common.scenario.as_ref().ok_or_else(|| CliError::Scenario("missing --scenario <path>".into()))?;
    let scenario = Scenario::load(path)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(CliError::Scenario("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Numerical(e.to_string()))?;
    pool.install(|| {
        let ctx = commands::Context::new(scenario, &cli.common)?;
        if cli.common.dry_run {
            return Ok(ctx.dry_run(cli.command));
        }
        ctx.execute(cli.command)
    })
}
