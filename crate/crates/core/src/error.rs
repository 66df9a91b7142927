use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(
        "point at distance {radius:.6} from the origin lies outside the tubular neighbourhood"
    )]
    Domain { radius: f64 },

    #[error("integration failed at step {step}: {reason}")]
    Integration { step: usize, reason: String },

    #[error(
        "solver did not converge after {iterations} iterations (last residual {residual:.3e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("solver error: {0}")]
    Solver(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("unsupported shape: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Tags errors raised while integrating or solving, as opposed to bad input.
    pub fn is_solver(&self) -> bool {
        matches!(
            self,
            Error::Domain { .. }
                | Error::Integration { .. }
                | Error::NoConvergence { .. }
                | Error::Solver(_)
        )
    }
}
