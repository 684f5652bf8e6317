use thiserror::Error;

use crate::economy::Violation;
use crate::partition::Partition;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Solver,
    Validation,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("aggregation mismatch: household assets {household} vs firm equity {firm} (relative residual {residual:e})")]
    AggregationMismatch {
        household: f64,
        firm: f64,
        residual: f64,
    },

    #[error("degenerate denominator in {context}: {value:e}")]
    Degenerate { context: &'static str, value: f64 },

    #[error("non-positive price level {0:e}")]
    NonPositivePrice(f64),

    #[error("{solver} did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("no partition with max distance below {epsilon}: best found {best:e}")]
    EpsilonUnreachable {
        epsilon: f64,
        best: f64,
        partition: Box<Partition>,
    },

    #[error("state validation failed: {}", summarize(.0))]
    Invalid(Vec<Violation>),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("period {period}: {source}")]
    AtPeriod {
        period: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

fn summarize(v: &[Violation]) -> String {
    let head: Vec<String> = v.iter().take(3).map(|x| x.to_string()).collect();
    if v.len() > 3 {
        format!("{} (+{} more)", head.join("; "), v.len() - 3)
    } else {
        head.join("; ")
    }
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::AtPeriod { source, .. } => source.kind(),
            Error::Degenerate { .. }
            | Error::NonPositivePrice(_)
            | Error::NonConvergence { .. }
            | Error::EpsilonUnreachable { .. } => ErrorKind::Solver,
            Error::AggregationMismatch { .. } | Error::Invalid(_) => ErrorKind::Validation,
            Error::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Usage,
        }
    }

    pub(crate) fn at_period(self, period: usize) -> Error {
        Error::AtPeriod {
            period,
            source: Box::new(self),
        }
    }
}
