use std::path::{Path, PathBuf};

/// Errors of the command-line layer; each maps to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] upada_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: bad `{field}`: {reason}", path.display())]
    Format { path: PathBuf, field: String, reason: String },
    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("{0}")]
    Experiment(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// 1 experiment failure, 2 input or config error, 3 numerical abort.
    pub fn exit_code(&self) -> u8 {
        use upada_core::Error as C;
        match self {
            Error::Core(C::NumericalAbort { .. } | C::NonFinite { .. }) => 3,
            Error::Core(C::Config { .. } | C::Usage(_)) => 2,
            Error::Io { .. } | Error::Format { .. } | Error::Config { .. } => 2,
            Error::Core(_) | Error::Experiment(_) => 1,
        }
    }

    pub(crate) fn format(path: &Path, field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
