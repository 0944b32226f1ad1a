use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: truncation dimension must be at least 1")]
    InvalidDimension(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical consistency check failed: {0}")]
    NumericalConsistency(String),

    #[error("invalid envelope: mean photon number n = {n} is below sinh^2(r) = {min}")]
    InvalidEnvelope { n: f64, min: f64 },

    #[error("lattice window {window} exceeds the cap of {cap}")]
    LatticeWindow { window: usize, cap: usize },

    #[error("truncation failure: {0}")]
    Truncation(String),

    #[error("channel incomplete on its support: eps_trunc = {eps_trunc:e} >= eps_kraus = {eps_kraus:e}")]
    IncompleteChannel { eps_trunc: f64, eps_kraus: f64 },

    #[error("oracle scale guard violated: {0}")]
    OracleScale(String),

    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    #[error("optimization failed: {0}")]
    OptimizationFailure(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse error families, used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorFamily {
    Config,
    Construction,
    Certification,
    Optimization,
    Checkpoint,
    Other,
}

impl Error {
    pub fn family(&self) -> ErrorFamily {
        match self {
            Error::Config(_) | Error::InvalidSpace(_) => ErrorFamily::Config,
            Error::InvalidDimension(_)
            | Error::InvalidArgument(_)
            | Error::InvalidEnvelope { .. }
            | Error::LatticeWindow { .. }
            | Error::Truncation(_) => ErrorFamily::Construction,
            Error::IncompleteChannel { .. } | Error::NumericalConsistency(_) => ErrorFamily::Certification,
            Error::OptimizationFailure(_) => ErrorFamily::Optimization,
            Error::Checkpoint(_) => ErrorFamily::Checkpoint,
            Error::OracleScale(_) | Error::Io(_) => ErrorFamily::Other,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.family() {
            ErrorFamily::Other => 1,
            ErrorFamily::Config => 2,
            ErrorFamily::Construction => 3,
            ErrorFamily::Certification => 4,
            ErrorFamily::Optimization => 5,
            ErrorFamily::Checkpoint => 6,
        }
    }
}
