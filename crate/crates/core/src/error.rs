use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front ends to pick exit codes and message prefixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Io,
    Validation,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid genotype value {value} for marker {marker}")]
    InvalidGenotype { marker: usize, value: f64 },

    #[error("marker {0} has no observed genotypes")]
    AllMissingMarker(usize),

    #[error("marker {0} is constant across individuals")]
    ConstantMarker(usize),

    #[error("environmental covariates are rank deficient (rank {rank} < {d})")]
    RankDeficientCovariates { rank: usize, d: usize },

    #[error("first environmental covariate column must be the all-ones intercept")]
    MissingIntercept,

    #[error("marker positions out of genome order at marker {0}")]
    UnorderedPositions(usize),

    #[error("invalid phenotype: {0}")]
    InvalidPhenotype(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not enough individuals: n = {n} must exceed d = {d}")]
    TooFewIndividuals { n: usize, d: usize },

    #[error(
        "IRLS did not converge within {iterations} iterations (score max-norm {score_norm:e})"
    )]
    NoConvergence { iterations: usize, score_norm: f64 },

    #[error("perfect separation: fitted means reach 0 or 1")]
    PerfectSeparation,

    #[error("marker {0} has degenerate score variance after projection on the covariates")]
    DegenerateMarker(usize),

    #[error("correlation matrix is not positive semi-definite (pivot {pivot:e})")]
    NotPositiveSemidefinite { pivot: f64 },

    #[error("approximation order {order} exceeds the band width {bandwidth}")]
    OrderExceedsBandwidth { order: usize, bandwidth: usize },

    #[error("dimension {0} is outside the deterministic box range 1..=6")]
    DimensionOutOfRange(usize),

    #[error("gamma_k is not monotone in alpha_loc near {alpha_loc:e}")]
    NonMonotoneGamma { alpha_loc: f64 },

    #[error("root not bracketed: 1 - gamma at the Bonferroni level is {fwer_at_lower:e} > alpha")]
    RootNotBracketed { fwer_at_lower: f64 },

    #[error("responses are not exchangeable: {0}")]
    NotExchangeable(String),

    #[error("{b} permutations cannot reach confidence {confidence}")]
    InsufficientPermutations { b: usize, confidence: f64 },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } => ErrorCategory::Io,
            Error::Parse { .. }
            | Error::DimensionMismatch(_)
            | Error::InvalidGenotype { .. }
            | Error::AllMissingMarker(_)
            | Error::ConstantMarker(_)
            | Error::RankDeficientCovariates { .. }
            | Error::MissingIntercept
            | Error::UnorderedPositions(_)
            | Error::InvalidPhenotype(_)
            | Error::InvalidArgument(_)
            | Error::TooFewIndividuals { .. }
            | Error::OrderExceedsBandwidth { .. }
            | Error::DimensionOutOfRange(_)
            | Error::NotExchangeable(_)
            | Error::InsufficientPermutations { .. } => ErrorCategory::Validation,
            Error::NoConvergence { .. }
            | Error::PerfectSeparation
            | Error::DegenerateMarker(_)
            | Error::NotPositiveSemidefinite { .. }
            | Error::NonMonotoneGamma { .. }
            | Error::RootNotBracketed { .. } => ErrorCategory::Numeric,
        }
    }
}
