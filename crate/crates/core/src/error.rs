use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degree {requested} exceeds the hard cap {cap}")]
    DegreeCap { requested: usize, cap: usize },

    #[error("grid cannot resolve degree {degree}: {detail}")]
    GridTooCoarse { degree: usize, detail: String },

    #[error("real harmonic sign convention self-test failed: {0}")]
    ConventionMismatch(String),

    #[error("surface leaves the admissible domain: {0}")]
    Domain(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("harmonic extension rejected: {0}")]
    ExtensionRejected(String),

    #[error("fixed-point iteration failed to contract after {iterations} iterations (last step {last_step:.3e})")]
    NonContraction { iterations: usize, last_step: f64 },

    #[error("resonance set problem: {0}")]
    Resonance(String),

    #[error("solver did not converge after {iterations} iterations: residual {residual:.3e}, constraint {constraint:.3e}")]
    NotConverged {
        iterations: usize,
        residual: f64,
        constraint: f64,
    },

    #[error("jacobian rank collapse: smallest scaled singular value {0:.3e}")]
    RankCollapse(f64),

    #[error("serialization: {0}")]
    Serialization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of a numerical method, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::NonFinite(_)
                | Error::ExtensionRejected(_)
                | Error::NonContraction { .. }
                | Error::NotConverged { .. }
                | Error::RankCollapse(_)
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
