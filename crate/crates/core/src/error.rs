use thiserror::Error;

/// Errors raised by model construction, solvers and experiment plumbing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ellipticity violated: a_min = a0 - (cbar/2)*sum_j j^-qdec = {a_min:.6e} must be positive")]
    Ellipticity { a_min: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("value outside its domain: {0}")]
    Domain(String),

    #[error("Newton iteration failed at time step {step}: residual {residual:.3e} after {iterations} iterations")]
    NewtonFailure {
        step: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("cubature node {index} failed: {source}")]
    Node {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cache file {path}: {reason}")]
    Cache { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by bad input rather than by a numerical solver.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Ellipticity { .. }
                | Error::InvalidModel(_)
                | Error::Domain(_)
                | Error::Config(_)
                | Error::Contract(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
