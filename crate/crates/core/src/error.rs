use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failure categories shared by every module of the core crate.
///
/// The split mirrors how callers react: configuration problems are usage
/// errors, input problems are data errors, numeric failures abort training.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Inconsistent or out-of-range configuration.
    Config(String),
    /// Input data that cannot be processed as given.
    Input(String),
    /// A label or index outside its valid range.
    Label(String),
    /// A non-finite value appeared during optimization.
    Numeric(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Input(m) => write!(f, "input error: {m}"),
            Error::Label(m) => write!(f, "label error: {m}"),
            Error::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl core::error::Error for Error {}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
