use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed NIfTI header: {0}")]
    MalformedHeader(String),

    #[error("non-finite voxel value at linear index {index}")]
    NonFinite { index: usize },

    #[error("unknown label value {value} (allowed: {allowed:?})")]
    UnknownLabel { value: f64, allowed: Vec<u16> },

    #[error("dimensionality mismatch: {0}")]
    Dimensionality(String),

    #[error("dimension {value} exceeds the NIfTI-1 header limit of 32767")]
    HeaderLimit { value: usize },

    #[error("invalid probability stack: {0}")]
    InvalidProbabilities(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("both masks are empty; surface metrics are undefined")]
    BothEmpty,

    #[error("surface is empty on the {0} side")]
    EmptySurface(&'static str),

    #[error("subset budget exceeded: {count} subsets requested, budget is {budget}")]
    BudgetExceeded { count: u128, budget: u128 },

    #[error("failed to load ensemble member `{member_id}`: {source}")]
    MemberLoad {
        member_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in JSON error objects.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedHeader(_) => "malformed_header",
            Error::NonFinite { .. } => "non_finite",
            Error::UnknownLabel { .. } => "unknown_label",
            Error::Dimensionality(_) => "dimensionality",
            Error::HeaderLimit { .. } => "header_limit",
            Error::InvalidProbabilities(_) => "invalid_probabilities",
            Error::Manifest(_) => "manifest",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::EmptyInput(_) => "empty_input",
            Error::BothEmpty => "both_empty",
            Error::EmptySurface(_) => "empty_surface",
            Error::BudgetExceeded { .. } => "budget_exceeded",
            Error::MemberLoad { source, .. } => source.kind(),
            Error::Config(_) => "config",
        }
    }

    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::MemberLoad { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
