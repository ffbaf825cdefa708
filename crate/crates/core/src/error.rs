use chrono::NaiveDate;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("series misaligned: {0}")]
    Alignment(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("gap in daily series: missing {missing}")]
    Gap { missing: NaiveDate },

    #[error("{path}:{line}: {message}")]
    Ingest {
        path: String,
        line: u64,
        message: String,
    },

    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("rank deficient design: {0}")]
    RankDeficient(String),

    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("fit did not converge after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        trace: Vec<IterationRecord>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// One P-IRLS iteration as recorded for non-convergence reports.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub penalized_deviance: f64,
    pub score_norm: f64,
    pub step_halvings: usize,
}

impl Error {
    /// True for errors caused by the numerics rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::Numerical(_)
                | Error::NotPositiveDefinite(_)
                | Error::RankDeficient(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
