use std::path::Path;

use thiserror::Error;
use triband_core::optimizer::OptimizeError;
use triband_core::{NliError, ScenarioError, SimulationError};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 1;
    pub const SOLVER: i32 = 2;
    pub const INFEASIBLE: i32 = 3;
    pub const TOLERANCE: i32 = 4;
    pub const USAGE: i32 = 64;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Tolerance(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => exit::CONFIG,
            CliError::Solver(_) => exit::SOLVER,
            CliError::Infeasible(_) => exit::INFEASIBLE,
            CliError::Tolerance(_) => exit::TOLERANCE,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<NliError> for CliError {
    fn from(e: NliError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<triband_core::PropagationError> for CliError {
    fn from(e: triband_core::PropagationError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<OptimizeError> for CliError {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::Infeasible(_) | OptimizeError::ZeroBudget => CliError::Infeasible(e.to_string()),
            OptimizeError::Simulation(_) => CliError::Solver(e.to_string()),
            OptimizeError::Scenario(_) | OptimizeError::Checkpoint { .. } | OptimizeError::CheckpointMismatch { .. } => {
                CliError::Config(e.to_string())
            }
        }
    }
}
