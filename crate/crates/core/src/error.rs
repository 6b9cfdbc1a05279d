use std::path::PathBuf;

/// Errors produced anywhere in the countermeasure pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav decode error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("unsupported sample rate {0} Hz (expected 16000)")]
    UnsupportedSampleRate(u32),

    #[error("unsupported channel count {0} (expected mono)")]
    Multichannel(u16),

    #[error("unsupported sample format: {0}")]
    UnsupportedFormat(String),

    #[error("waveform {0} is empty after trim")]
    EmptyAfterTrim(String),

    #[error("annotation error: {0}")]
    Annotation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported subband split n={0} (expected 1, 2, 4 or 8)")]
    UnsupportedSplit(usize),

    #[error("band index {index} out of range for {n} bands")]
    BandIndex { index: usize, n: usize },

    #[error("invalid model configuration: {0}")]
    ModelConfig(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint content hash mismatch: manifest {expected}, weights {actual}")]
    HashMismatch { expected: String, actual: String },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("empty partition: {0}")]
    EmptyPartition(String),

    #[error("utterance id sets differ: only in first {only_first:?}, only in second {only_second:?}")]
    IdMismatch {
        only_first: Vec<String>,
        only_second: Vec<String>,
    },

    #[error("both classes are required: {0}")]
    SingleClass(String),

    #[error("degenerate t-DCF coefficients: {0}")]
    DegenerateTdcf(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front end.
    ///
    /// 2 = configuration problem, 3 = data problem, 4 = training divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::ModelConfig(_)
            | Error::UnsupportedSplit(_)
            | Error::BandIndex { .. }
            | Error::Json { .. } => 2,
            Error::Divergence(_) => 4,
            _ => 3,
        }
    }
}
