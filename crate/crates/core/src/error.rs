use thiserror::Error;

use crate::train::History;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("division hazard in {context}: zero denominator with zero stabilizer, use a positive epsilon")]
    DivisionHazard { context: String },

    #[error("no root point: {0}")]
    NoRoot(String),

    #[error("degenerate relevance model: |gate * signal| = {0:e} at the anchor")]
    Degenerate(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error("missing field `{0}`")]
    MissingField(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, history: History },

    #[error("only {converged} of {required} models converged after {attempts} attempts")]
    InsufficientModels {
        converged: usize,
        required: usize,
        attempts: usize,
    },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Shape {
            context: context.into(),
            expected,
            got,
        }
    }

    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }

    pub(crate) fn hazard(context: impl Into<String>) -> Self {
        Error::DivisionHazard {
            context: context.into(),
        }
    }

    /// Short stable identifier, used by the CLI for machine-readable errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::DivisionHazard { .. } => "division_hazard",
            Error::NoRoot(_) => "no_root",
            Error::Degenerate(_) => "degenerate",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Version { .. } => "version",
            Error::MissingField(_) => "missing_field",
            Error::Parse(_) => "parse",
            Error::Dimension(_) => "dimension",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::Diverged { .. } => "diverged",
            Error::InsufficientModels { .. } => "insufficient_models",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
            Error::Io(_) => "io",
        }
    }
}
