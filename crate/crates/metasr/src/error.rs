use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Wav { path: PathBuf, source: hound::Error },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit status: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Numeric(_) => 3,
            Error::Data(_) | Error::Io { .. } | Error::Wav { .. } => 2,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
        move |source| Error::Io { path: path.to_path_buf(), source }
    }
}

impl From<metasr_core::Error> for Error {
    fn from(e: metasr_core::Error) -> Self {
        use metasr_core::Error as C;
        match e {
            C::Config(m) => Error::Usage(m),
            C::Input(m) | C::Label(m) => Error::Data(m),
            C::Numeric(m) => Error::Numeric(m),
        }
    }
}
