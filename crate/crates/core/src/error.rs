use thiserror::Error;

/// Errors produced anywhere in the planning pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported format_version {found} (expected {expected})")]
    UnsupportedVersion { found: u64, expected: u64 },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("uncommon computation graph: parameter `{param}` is used by coarse operators {first} and {second}; mark it shared")]
    UncommonGraph {
        param: String,
        first: usize,
        second: usize,
    },

    #[error("chunk length {chunk_length} is smaller than parameter `{param}` ({numel} elements)")]
    ChunkTooSmall {
        param: String,
        numel: u64,
        chunk_length: u64,
    },

    #[error("inconsistent inputs: {0}")]
    Consistency(String),

    #[error("infeasible rCache: {0}")]
    InfeasibleCache(String),

    #[error("oracle limit exceeded: {0}")]
    OracleLimit(String),

    #[error("missing hardware table entry for {0} processes")]
    MissingRateEntry(u32),

    #[error("no feasible chunk length among {0} candidates")]
    NoFeasibleCandidate(usize),

    #[error("strategy {0} is not defined")]
    UndefinedStrategy(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Infeasibility (as opposed to malformed input) maps to a distinct exit status in the CLI.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            Error::InfeasibleCache(_) | Error::NoFeasibleCandidate(_)
        )
    }

    /// Short machine-readable tag, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse(_) => "parse",
            Error::UnsupportedVersion { .. } => "version",
            Error::Validation(_) => "validation",
            Error::UncommonGraph { .. } => "uncommon_graph",
            Error::ChunkTooSmall { .. } => "chunk_too_small",
            Error::Consistency(_) => "consistency",
            Error::InfeasibleCache(_) => "infeasible_cache",
            Error::OracleLimit(_) => "oracle_limit",
            Error::MissingRateEntry(_) => "missing_rate_entry",
            Error::NoFeasibleCandidate(_) => "no_feasible_candidate",
            Error::UndefinedStrategy(_) => "undefined_strategy",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Io(_) => "io",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
