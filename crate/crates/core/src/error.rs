use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate stream: no informative stratum")]
    DegenerateStream,

    #[error("no predicate-matching samples observed")]
    NoMatchingSamples,

    #[error("stratum {stratum} has positive weight but zero effective samples")]
    ZeroEffectiveSamples { stratum: usize },

    #[error("proxy score {0} outside [0, 1]")]
    ProxyOutOfRange(f64),

    #[error("pilot segment empty")]
    EmptyPilot,

    #[error("oracle budget exceeded: call {attempted} with a per-segment limit of {limit}")]
    BudgetExceeded { limit: u64, attempted: u64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Parse(#[from] crate::querylang::ParseError),

    #[error(transparent)]
    Dataset(#[from] crate::harness::dataset::DatasetError),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
