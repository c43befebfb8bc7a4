use std::path::PathBuf;

use thiserror::Error;

use crate::time::Timestamp;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}: missing column `{name}`")]
    MissingColumn { source_name: String, name: String },

    #[error("{source_name}: bad row at line {line}: {reason}")]
    BadRow {
        source_name: String,
        line: u64,
        reason: String,
    },

    #[error("dangling {kind} reference `{id}`")]
    DanglingReference { kind: String, id: String },

    #[error("unknown segment `{0}`")]
    UnknownSegment(String),

    #[error("segment `{segment_id}`: slice window before {anchor} precedes all corpus data")]
    InsufficientCoverage {
        segment_id: String,
        anchor: Timestamp,
    },

    #[error("no weather record covers {0}")]
    NoWeatherCoverage(Timestamp),

    #[error("no viable strata: all {dropped} crashes lacked enough matched controls")]
    NoViableStrata { dropped: usize },

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unknown grouping `{0}`")]
    UnknownGrouping(String),

    #[error("random-effect precision must be positive, got {0}")]
    NonPositiveTau(f64),

    #[error("likelihood is unbounded: a feature perfectly ranks cases above controls (|beta| = {norm:.1})")]
    Separation { norm: f64 },

    #[error("Newton iteration did not converge in {iterations} iterations (gradient max-norm {gradient:.3e})")]
    NoConvergence { iterations: usize, gradient: f64 },

    #[error("log target is not finite at the initial point")]
    NonFiniteTarget,

    #[error("chain {chain} acceptance rate {rate:.4} after burn-in is below 0.01")]
    ZeroAcceptance { chain: usize, rate: f64 },

    #[error("too few draws: {found} kept per chain, at least {required} required")]
    TooFewDraws { found: usize, required: usize },

    #[error("R-hat needs at least two chains")]
    SingleChain,

    #[error("score set is empty")]
    EmptyScores,

    #[error("ROC needs both crash and non-crash observations")]
    SingleClass,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("m = {m}: {source}")]
    AtRatio {
        m: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn bad_row(source_name: &str, line: u64, reason: impl Into<String>) -> Self {
        Error::BadRow {
            source_name: source_name.to_string(),
            line,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
