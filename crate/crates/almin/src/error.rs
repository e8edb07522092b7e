use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit-code contract:
/// 1 = a mathematical verdict failed, 2 = bad input, 3 = resource/horizon.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-contract input (bad config, unknown letter, ...).
    #[error("input error: {0}")]
    Input(String),
    /// A configured cap (length, depth, horizon) was exceeded.
    #[error("resource limit: {0}")]
    Resource(String),
    /// An enumeration failed to stabilize within its horizon; carries the trail.
    #[error("no stabilization within horizon: {0}")]
    Diagnostic(String),
    /// An invariant that the underlying theory guarantees failed to hold.
    #[error("structural failure: {0}")]
    Structural(String),
    /// A certification procedure returned a FAIL verdict it cannot report as data.
    #[error("certification failed: {0}")]
    Certification(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Structural(_) | Error::Certification(_) => 1,
            Error::Input(_) => 2,
            Error::Resource(_) | Error::Diagnostic(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
