use std::path::PathBuf;

/// Crate-wide error type. Variants are grouped by the subsystem that raises
/// them so callers can map failures to exit codes without string matching.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad idx magic: expected {expected:#010x}, got {got:#010x}")]
    IdxMagic { path: PathBuf, expected: u32, got: u32 },

    #[error("{path}: idx file truncated: header promises {needed} bytes, file holds {got}")]
    IdxTruncated { path: PathBuf, needed: usize, got: usize },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}:{line}: csv parse error: {what}")]
    CsvParse { path: PathBuf, line: usize, what: String },

    #[error("bad container magic")]
    ContainerMagic,

    #[error("unsupported container version {got} (supported: {supported})")]
    ContainerVersion { got: u16, supported: u16 },

    #[error("container checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ContainerChecksum { stored: u32, computed: u32 },

    #[error("container truncated: {what}")]
    ContainerTruncated { what: String },

    #[error("shape mismatch in {what}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("privacy target infeasible: {0}")]
    PrivacyInfeasible(String),

    #[error("non-finite loss at {0}")]
    NonFiniteLoss(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("privacy isolation violated: {0}")]
    IsolationViolation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
