use thiserror::Error;

/// Errors surfaced by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no robustly connected {topology} graph found after {attempts} samples (N={nodes})")]
    ResampleBudgetExhausted {
        topology: String,
        nodes: usize,
        attempts: u32,
    },

    #[error("node {0} cannot reach any Pac-Man node")]
    Unreachable(usize),

    #[error("power iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("malformed {what} at line {line}: {reason}")]
    Parse {
        what: &'static str,
        line: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for failures of numerical routines (non-convergence, singular systems).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonConvergence { .. } | Error::Singular(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
