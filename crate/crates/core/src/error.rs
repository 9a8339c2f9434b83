use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    AsymmetricInput { asymmetry: f64 },

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("problem too large: n = {n} exceeds the dense Kronecker limit of {limit}")]
    ProblemTooLarge { n: usize, limit: usize },

    #[error("covariance is not positive definite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("risk aversion of agent {agent} must be strictly positive, got {value}")]
    NonPositiveRiskAversion { agent: usize, value: f64 },

    #[error("invalid strategic set: {0}")]
    InvalidStrategicSet(String),

    #[error("agent index {index} out of range for {n} agents")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("No Nash Equilibrium (stacked residual {residual:.3e})")]
    NoEquilibrium { residual: f64 },

    #[error("active set of {rows} rows is rank deficient for {cols} coefficients")]
    RankDeficientActiveSet { rows: usize, cols: usize },

    #[error("infeasible threshold: keeping {keep} of {rows} rows leaves fewer than {cols} coefficients")]
    InfeasibleThreshold { keep: usize, rows: usize, cols: usize },

    #[error("belief recovery requires unit risk aversions (agent {agent} has {value})")]
    UnsupportedRiskAversion { agent: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "missing covariance file for the trade panel; inferring the covariance from trade data \
         (semidefinite programming) is not supported, supply it explicitly"
    )]
    MissingCovariance,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    /// Domain failures (exit status 1) as opposed to input/output and format failures (exit status 2).
    pub fn is_domain(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::Format { .. } | Error::MissingCovariance)
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
