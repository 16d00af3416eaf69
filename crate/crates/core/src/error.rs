use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("decay exponent {exponent} must exceed the dimension estimate {bound}")]
    ExponentTooSmall { exponent: f64, bound: f64 },
    #[error("model {model} is incompatible with this grid: {reason}")]
    IncompatibleModel { model: String, reason: String },
    #[error("eigendecomposition failed: {0}")]
    EigenFailure(String),
    #[error("scale must be positive, got {0}")]
    ScaleNonpositive(f64),
    #[error("inner scale t = {t} exceeds outer scale s = {s}")]
    ScaleOrderViolation { s: f64, t: f64 },
    #[error("profile {label} vanishes to order {order}; at least {required} is needed")]
    InsufficientVanishing { label: String, order: u32, required: u32 },
    #[error("profile {label} is not even (residual {residual:e})")]
    NotEven { label: String, residual: f64 },
    #[error("profile {label} does not decay: seminorm of order {order} grows")]
    NotDecaying { label: String, order: u32 },
    #[error("profile {0} has no Tauberian annulus")]
    NoTauberianAnnulus(String),
    #[error("partition normalizer vanishes near {0}")]
    TauberianGapUncovered(f64),
    #[error("exponent p is out of range: {0}")]
    InvalidP(f64),
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("empty range: {0}")]
    EmptyRange(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("lambda must be positive, got {0}")]
    NonpositiveLambda(f64),
    #[error("sigma must be positive, got {0}")]
    NonpositiveSigma(f64),
    #[error("band limit {band} is not resolvable on {size} points")]
    BandLimitExceeded { band: usize, size: usize },
    #[error("corpus has no usable entries")]
    EmptyCorpus,
    #[error("profile {label} is not admissible: {reason}")]
    ProfileNotAdmissible { label: String, reason: String },
    #[error("unknown builtin {0}")]
    UnknownBuiltin(String),
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("io failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
