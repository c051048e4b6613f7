use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    /// An iterative method ran out of iterations.
    #[error("{op} did not converge after {iterations} iterations")]
    NonConvergence { op: &'static str, iterations: usize },

    /// Singular, indefinite or badly conditioned matrix.
    #[error("numerical error in {op}: {detail}")]
    Numerical { op: &'static str, detail: String },

    /// Matrix or vector shapes do not agree.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// The Sherman-Morrison denominator `1 - u'Pu` is not positive.
    #[error("covariance correction failed: denominator {denominator:e} is not positive")]
    CovarianceCorrection { denominator: f64 },

    /// The log posterior decreased between EM iterations.
    #[error("EM log posterior decreased by {decrease:e} at iteration {iteration}")]
    Monotonicity { iteration: usize, decrease: f64 },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("run failed: {0}")]
    Run(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain { op, detail: detail.into() }
    }

    pub(crate) fn numerical(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Numerical { op, detail: detail.into() }
    }

    pub(crate) fn dimension(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }
}
