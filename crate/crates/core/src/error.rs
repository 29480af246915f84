use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("mesh validation error: {0}")]
    MeshValidation(String),

    #[error("trivial space: {0}")]
    TrivialSpace(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parameter {mu:?} outside the parameter domain")]
    Domain { mu: Vec<f64> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("inf-sup failure: zero pivot in bordered factorization (row {row}, smallest |pivot| {pivot:e})")]
    InfSup { row: usize, pivot: f64 },

    #[error("factorization failure: zero pivot at row {row} (|pivot| {pivot:e})")]
    Factorization { row: usize, pivot: f64 },

    #[error("reduced inf-sup failure; enrich basis ({0})")]
    ReducedInfSup(String),

    #[error("eigen-solver did not converge after {iterations} iterations (last change {change:e})")]
    EigenNonConvergence { iterations: usize, change: f64 },

    #[error("projection onto the admissible set did not converge in {sweeps} sweeps (change {change:e}, divergence residual {div_residual:e})")]
    ProjectionNotConverged {
        sweeps: usize,
        change: f64,
        div_residual: f64,
    },

    #[error("fixed-point iteration did not converge in {iterations} iterations (last increment {last_increment:e}); try a smaller damping")]
    NonConvergence {
        iterations: usize,
        last_increment: f64,
        history: Vec<f64>,
    },

    #[error("solver residual {residual:e} above tolerance {tol:e} ({what})")]
    Residual {
        what: &'static str,
        residual: f64,
        tol: f64,
    },

    #[error("at parameter {mu:?}: {source}")]
    AtParameter {
        mu: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn at(self, mu: &[f64]) -> Error {
        match self {
            e @ Error::AtParameter { .. } => e,
            other => Error::AtParameter {
                mu: mu.to_vec(),
                source: Box::new(other),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
