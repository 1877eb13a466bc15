use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter fails its contract (non-finite, wrong sign, out of range).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A time falls outside a sample path's window.
    #[error("time {t} outside path window [{lo}, {hi})")]
    OutOfWindow { t: f64, lo: f64, hi: f64 },

    /// Grid construction or node lookup failed.
    #[error("grid error: {0}")]
    Grid(String),

    /// Grid node index out of range.
    #[error("node index {index} out of range (tau = {tau})")]
    NodeIndex { index: usize, tau: usize },

    /// A probability mass function violates its invariants.
    #[error("invalid distribution: {0}")]
    Distribution(String),

    /// A caller-side contract was violated (length mismatch, empty input).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Absolute continuity fails: positive mass or rate where the
    /// reference assigns none. The divergence is infinite.
    #[error("absolute continuity violated: {0}")]
    AbsoluteContinuity(String),

    /// A user-supplied rate model returned an unusable value.
    #[error("model error: {0}")]
    Model(String),

    /// Not enough data to estimate the requested quantity.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// A non-finite intermediate appeared where a finite value is required.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
