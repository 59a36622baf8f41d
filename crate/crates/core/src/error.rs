//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum EivError {
    /// Cholesky factorization of the target covariance failed.
    #[error("target covariance not SPD")]
    CovarianceNotSpd,

    /// A marginal law without known analytic mean/variance was asked to
    /// standardize (e.g. Student t with df <= 2).
    #[error("no finite analytic variance for {0}")]
    UnknownLawMoments(String),

    /// A design specification violated one of its invariants.
    #[error("invalid design: {0}")]
    InvalidDesign(String),

    /// Too few observations for the requested operation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// |s0| fell below the configured floor; log-CF derivative ratios are
    /// unstable there.
    #[error("ECF denominator underflow at u = {at_u}: |s0| = {denom_mag} < {floor}")]
    DenominatorUnderflow {
        at_u: f64,
        denom_mag: f64,
        floor: f64,
    },

    /// More than half of the quadrature nodes were masked for this b.
    #[error("quadrature grid degenerate: {masked} of {total} nodes masked")]
    GridDegenerate { masked: usize, total: usize },

    /// Every optimizer start failed.
    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    /// Rank-deficient regression design matrix.
    #[error("singular design matrix")]
    SingularDesign,

    /// Fewer instruments than regressors.
    #[error("underidentified: {m} instruments for {k} regressors")]
    Underidentified { m: usize, k: usize },

    /// Equivalence-demo scaling constants must avoid 0 and 1.
    #[error("invalid scaling: c = {0} (must not be 0 or 1)")]
    InvalidScaling(f64),

    /// An estimator failed on every Monte Carlo replication.
    #[error("method {0} failed on all replications")]
    MethodFailed(String),

    /// Config file syntax or content error.
    #[error("config error: {0}")]
    Config(String),

    /// CSV input could not be parsed.
    #[error("csv parse error at line {line}: {msg}")]
    CsvParse { line: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EivError>;
