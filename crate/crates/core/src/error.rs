use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("eigenvalue {index} is {value}; the stiffness operator must be strictly positive")]
    NonPositiveEigenvalue { index: usize, value: f64 },

    #[error("damping is not dissipative: max Re<Bv,v>/|v|^2 = {max_real_part:e}")]
    NotDissipative { max_real_part: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what} is singular on the truncation")]
    Singular { what: &'static str },

    #[error("negative time t = {0}")]
    NegativeTime(f64),

    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("point {re}{im:+}i lies within {distance:e} of the spectrum")]
    NearSpectrum { re: f64, im: f64, distance: f64 },

    #[error("no sign change of the growth-bound equation on (-alpha, 0)")]
    NoSignChange,

    #[error("unstable step h = {h}: h·|Λ| = {product:.3} exceeds {limit}; use h <= {suggested:e}")]
    UnstableStep {
        h: f64,
        product: f64,
        limit: f64,
        suggested: f64,
    },

    #[error("simulation diverged at step {step} (t = {t})")]
    Diverged { step: usize, t: f64 },

    #[error("history grid mismatch: expected {expected} samples, found {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("jump measure has infinite second moment; use the additive-noise condition instead")]
    InfiniteSecondMoment,

    #[error("wrong theorem for this noise: {0}")]
    WrongTheorem(String),

    #[error("empirical measure has no samples")]
    EmptySample,

    #[error("vector is zero (norm {0:e})")]
    ZeroVector(f64),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
