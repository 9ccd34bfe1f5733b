use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("signal is empty")]
    EmptySignal,
    #[error("sample rate {0} unsupported")]
    UnsupportedSampleRate(u32),
    #[error("channels={0} unsupported")]
    UnsupportedChannels(u16),
    #[error("{0} unsupported")]
    UnsupportedEncoding(String),
    #[error("invalid STFT configuration: {0}")]
    InvalidStftConfig(String),
    #[error("window normalization is zero at sample {0}")]
    ZeroWindowSum(usize),
    #[error("negative magnitude {value} at frame {frame}, bin {bin}")]
    NegativeMagnitude { frame: usize, bin: usize, value: f64 },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("{0} RMS is zero")]
    SilentSignal(&'static str),
    #[error("empty corpus: no frames to compute statistics from")]
    EmptyCorpus,
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("gradient requested for a variable that is not part of this graph")]
    DetachedVariable,
    #[error("bad magic in {0}")]
    BadMagic(&'static str),
    #[error("unsupported {what} version {version}")]
    VersionMismatch { what: &'static str, version: u32 },
    #[error("unexpected end of tensor data")]
    UnexpectedEof,
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("malformed statistics file: {0}")]
    Stats(String),
    #[error("model has no normalization statistics")]
    MissingStats,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
