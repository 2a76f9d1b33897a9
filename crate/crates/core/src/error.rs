use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{name} is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { name: &'static str, asymmetry: f64 },

    #[error("{name} is not positive semidefinite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { name: &'static str, min_eigenvalue: f64 },

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("event time {time} is not on the Δ = {delta} grid")]
    OffGrid { time: f64, delta: f64 },

    #[error("particle weights collapsed at step {step}: every particle is inconsistent with the observation")]
    WeightCollapse { step: usize },

    #[error("transition covariance is singular; the smoother density is undefined")]
    SingularTransition,

    #[error("regressor Gram matrix is singular (condition number {condition:.3e}); input is not sufficiently exciting")]
    InsufficientExcitation { condition: f64 },

    #[error("numerical breakdown: {0}")]
    Numerical(String),

    #[error("EM iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration { iteration, source: Box::new(self) }
    }

    /// True for failures of the numerical pipeline, as opposed to bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::WeightCollapse { .. }
            | Error::SingularTransition
            | Error::InsufficientExcitation { .. }
            | Error::Numerical(_)
            | Error::NotPsd { .. } => true,
            Error::AtIteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
