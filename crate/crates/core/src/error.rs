use thiserror::Error;

use crate::numcore::NumError;

/// Crate-level error. Each variant names the module that raised it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("numcore: {0}")]
    Num(#[from] NumError),
    #[error("{module}: {msg}")]
    Contract { module: &'static str, msg: String },
    #[error("{module}: length {len} is not divisible by {divisor}")]
    Length {
        module: &'static str,
        len: usize,
        divisor: usize,
    },
    #[error("signal: no finite spectral peak in the {lo_hz}-{hi_hz} Hz band")]
    NoPeak { lo_hz: f64, hi_hz: f64 },
    #[error("signal: Pearson correlation undefined (zero variance)")]
    UndefinedCorrelation,
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Contract {
            module,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
