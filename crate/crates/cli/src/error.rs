use std::path::{Path, PathBuf};

use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Solve(#[from] elmap::Error),
    #[error("{0} invariant check(s) failed")]
    Invariants(usize),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    /// 1 for bad input, 2 for an infeasible problem, 3 for other solver
    /// failures and failed invariant checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Io { .. } | Self::Parse { .. } => 1,
            Self::Solve(elmap::Error::Infeasible { .. }) => 2,
            Self::Solve(e) if is_input_error(e) => 1,
            Self::Solve(_) | Self::Invariants(_) => 3,
        }
    }
}

fn is_input_error(e: &elmap::Error) -> bool {
    use elmap::Error::*;
    !matches!(e, SingularObjective | NotConverged { .. } | UnboundedInfluence { .. } | TooFewSamples { .. })
}
