use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid range: lo ({lo}) must be below hi ({hi})")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("point ({u}, {v}) lies outside the grid domain [0, {max_u}] x [0, {max_v}]")]
    OutOfDomain { u: f64, v: f64, max_u: f64, max_v: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("non-finite value produced by layer {layer} ({kind})")]
    Numeric { layer: usize, kind: &'static str },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("transfer error: {0}")]
    Transfer(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("unsupported IDX dtype code 0x{code:02X} at byte {offset}")]
    UnsupportedDtype { code: u8, offset: u64 },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    Version { found: u16, supported: u16 },

    #[error("csv error: {0}")]
    Csv(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
