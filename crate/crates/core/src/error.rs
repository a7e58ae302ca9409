use thiserror::Error;

/// Errors raised by the filter structures, the detection pipeline and the
/// summary-record codec.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("incompatible filters: {0}")]
    IncompatibleFilters(String),

    /// Event time lies more than one window width before the current window.
    #[error("stale event at {event_ms} ms (current window starts at {window_start_ms} ms)")]
    StaleEvent { event_ms: u64, window_start_ms: u64 },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Record for a protocol other than TCP or UDP; counted, not fatal.
    #[error("line {line}: unsupported protocol {proto:?}")]
    UnsupportedProtocol { line: usize, proto: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
