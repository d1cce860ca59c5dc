use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration has {got} sites, model has {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("site {site} holds {value}, spins must be 0 or 1")]
    InvalidSpin { site: usize, value: u8 },

    #[error("chain needs at least 2 sites, got {0}")]
    TooFewSites(usize),

    #[error("{n} sites exceeds the dense limit of {max}")]
    TooManySites { n: usize, max: usize },

    #[error("site {site} has a zero amplitude pair")]
    ZeroAmplitude { site: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("sampling failed at site {site}: conditional probabilities are not finite")]
    SamplingFailed { site: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sequence of length {len} is shorter than the window {window}")]
    TooShort { len: usize, window: usize },

    #[error("query {query} outside interpolation range [{lo}, {hi}]")]
    OutOfRange { query: f64, lo: f64, hi: f64 },

    #[error("no ensemble member contributes: {0}")]
    NoContributingMembers(String),

    #[error("snapshot format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
