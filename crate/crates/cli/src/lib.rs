//! Experiment harness for width-controlled beam printing: configuration,
//! open/closed-loop execution, Monte-Carlo comparison, calibration flows,
//! and deterministic file reports. The `layerbeam` binary is a thin wrapper
//! over this library.

pub mod config;
pub mod files;
pub mod report;
pub mod runner;

/// Harness-level error, carrying the process exit code policy:
/// 0 success, 1 I/O, 2 invalid config/input, 3 infeasible, 4 numerical.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Io(_) => 1,
            HarnessError::Config(_) => 2,
            HarnessError::Infeasible(_) => 3,
            HarnessError::Numerical(_) => 4,
        }
    }
}
