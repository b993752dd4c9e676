use std::path::PathBuf;

/// Crate-wide error type.
///
/// Everything except `Io` is a validation failure (bad shapes, bad config,
/// malformed files); the CLI maps validation to exit code 1 and `Io` to 2.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error("wav error: {0}")]
    Wav(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("quantization error: {0}")]
    Quant(String),

    #[error("training error: {0}")]
    Train(String),

    #[error("dsp error: {0}")]
    Dsp(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
