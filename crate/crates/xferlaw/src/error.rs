//! Error type shared by all analysis modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record in field `{field}`: {message}")]
    MalformedLine {
        line: usize,
        field: String,
        message: String,
    },

    #[error("duplicate run_id `{run_id}` (lines {first_line} and {second_line})")]
    DuplicateRunId {
        run_id: String,
        first_line: usize,
        second_line: usize,
    },

    #[error("run `{run_id}`: {message}")]
    InvalidRecord { run_id: String, message: String },

    #[error("run `{run_id}` has no compute values; compute-axis curves need them")]
    MissingCompute { run_id: String },

    #[error("baseline for n_params={n_params} has a single point; interpolation needs at least two")]
    SinglePointBaseline { n_params: u64 },

    #[error("baseline curve is not cleaned monotone: {message}")]
    InvalidCurve { message: String },

    #[error(
        "target loss {target_loss} is below the baseline minimum {min_loss}; \
         the from-scratch model never reaches it on the observed grid"
    )]
    NotAttainable { target_loss: f64, min_loss: f64 },

    #[error(
        "target loss {target_loss} is above the baseline maximum {max_loss} \
         and extrapolation is disabled"
    )]
    AboveBaseline { target_loss: f64, max_loss: f64 },

    #[error("no from-scratch baseline curve for n_params in {missing:?}")]
    MissingBaselines { missing: Vec<u64> },

    #[error(
        "fraction undefined: d_finetune + d_transferred = {sum} must be positive \
         (d_transferred={d_transferred}, d_finetune={d_finetune})"
    )]
    UndefinedFraction {
        d_transferred: f64,
        d_finetune: f64,
        sum: f64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fractions outside (0, 1) at points {points:?}")]
    FractionOutOfRange { points: Vec<(f64, f64)> },

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("d_finetune group {d_finetune} has only {count} usable rows; need at least 2")]
    GroupTooSmall { d_finetune: u64, count: usize },

    #[error("curve for n_params={n_params} is degenerate: {reason}")]
    DegenerateCurve { n_params: u64, reason: String },

    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
