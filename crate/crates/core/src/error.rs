//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Error, Debug)]
pub enum CoreError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("operator expects {expected} component(s), field has {got}")]
    ComponentMismatch { expected: usize, got: usize },

    #[error("background density must be strictly positive (min sample {min:.3e})")]
    NonPositiveDensity { min: f64 },

    #[error("winding/eps^alpha = {value:.6} is not an integer; phase would not be periodic")]
    WindingNotInteger { value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("iterative solve did not converge: {iters} iterations, residual {residual:.3e} (conditioning estimate {condition:.3e})")]
    SolveDidNotConverge {
        iters: usize,
        residual: f64,
        condition: f64,
    },

    #[error("step budget of {budget} steps exceeded before reaching t = {t_final}")]
    StepBudgetExceeded { budget: usize, t_final: f64 },

    #[error("CFL violation: dt = {dt:.3e} exceeds stable bound {dt_max:.3e}")]
    CflViolation { dt: f64, dt_max: f64 },

    #[error("trajectory snapshots misaligned in time: |{a} - {b}| above tolerance")]
    TimeMismatch { a: f64, b: f64 },

    #[error("matrix is not symmetric: defect {defect:.3e}")]
    NotSymmetric { defect: f64 },

    #[error("spectral truncation K = {k} exceeds grid Nyquist {nyquist}")]
    TruncationExceedsNyquist { k: usize, nyquist: usize },

    #[error("vector part has a non-gradient component of norm {norm:.3e} (tolerance {tol:.3e})")]
    NonGradientComponent { norm: f64, tol: f64 },

    #[error("weighted divergence of advecting field is {norm:.3e}, above tolerance {tol:.3e}")]
    NotWeightedSolenoidal { norm: f64, tol: f64 },

    #[error("tolerance conflict: {0}")]
    ToleranceConflict(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed field file {path}: {msg}")]
    FieldFormat { path: String, msg: String },
}

impl CoreError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}
