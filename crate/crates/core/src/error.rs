use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised across the library.
///
/// The variants are grouped so a driver can map them onto coarse exit
/// categories: configuration problems, numerical divergence, and
/// degenerate spectra or encoders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value in coordinate {coord} after Euler-Maruyama step")]
    Overflow { coord: usize },

    #[error("simulation blew up at step {step} (|x[{coord}]| = {value:e})")]
    BlowUp { step: usize, coord: usize, value: f64 },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("no spectral gap above ratio {ratio} at a majority of points ({found} of {total})")]
    NoGap { ratio: f64, found: usize, total: usize },

    #[error("degenerate encoder: {0}")]
    DegenerateEncoder(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("prune schedule error: {0}")]
    Schedule(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by the command-line driver for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numerical,
    Degenerate,
    Other,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Argument(_) | Error::Schedule(_) | Error::Format(_) | Error::Json(_) => {
                ErrorClass::Config
            }
            Error::Overflow { .. } | Error::BlowUp { .. } | Error::Divergence { .. } => ErrorClass::Numerical,
            Error::DegenerateSpectrum(_)
            | Error::NoGap { .. }
            | Error::DegenerateEncoder(_)
            | Error::DegenerateFit(_) => ErrorClass::Degenerate,
            _ => ErrorClass::Other,
        }
    }
}
