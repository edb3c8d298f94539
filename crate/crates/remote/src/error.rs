use thiserror::Error;

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("endpoint configuration error: {0}")]
    Config(String),

    /// The request never produced a usable HTTP response; `status` is the last one seen.
    #[error("transport error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Transport { status: Option<u16>, message: String },

    /// The server answered with a body that is not a chat completion.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Core(#[from] varsynth_core::Error),
}

pub type Result<T, E = RemoteError> = std::result::Result<T, E>;
