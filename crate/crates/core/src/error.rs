use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument in `{op}`: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("corrupt file {path}: {msg} (byte offset {offset})")]
    CorruptFile {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("corrupt scan/label pair: {scan} has {scan_points} points but {labels} has {label_count} labels")]
    CorruptPair {
        scan: PathBuf,
        labels: PathBuf,
        scan_points: usize,
        label_count: usize,
    },

    #[error("non-finite loss at step {step} (crop {crop}): {detail}")]
    NonFiniteLoss {
        step: usize,
        crop: String,
        detail: String,
    },

    #[error("coverage error: {uncovered} of {total} points received no vote")]
    Coverage { uncovered: usize, total: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that stem from user configuration rather than runtime
    /// data or I/O.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
