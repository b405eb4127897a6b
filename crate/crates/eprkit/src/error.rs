use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("spin quantum number {0} is not a nonnegative half-integer")]
    InvalidSpin(f64),

    #[error("invalid spin system: {0}")]
    InvalidSystem(String),

    #[error("matrix is not Hermitian: asymmetry {asymmetry:.3e} exceeds {tol:.3e} (relative)")]
    NotHermitian { asymmetry: f64, tol: f64 },

    #[error("dimension mismatch: operator cache built for dimension {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("temperature {0} K is not positive and finite")]
    InvalidTemperature(f64),

    #[error("direction vector has zero length")]
    ZeroDirection,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("traces are sampled on different frequency grids")]
    GridMismatch,

    #[error("no trace covers {lo_mhz:.3}..{hi_mhz:.3} MHz once exclusion windows are applied")]
    UncoveredWindow { lo_mhz: f64, hi_mhz: f64 },

    #[error("fit did not converge after {iterations} iterations (residual rms {residual_rms:.6e})")]
    NoConvergence {
        iterations: usize,
        residual_rms: f64,
        last_parameters: Vec<f64>,
    },

    #[error("rank-deficient system: {null_direction}")]
    RankDeficient { null_direction: String },

    #[error(
        "field-frequency slope {slope:.4} MHz/mT lies outside the range [{lo:.4}, {hi:.4}] \
         spanned by the g-tensor"
    )]
    SlopeOutOfRange { slope: f64, lo: f64, hi: f64 },

    #[error("not enough data: {0}")]
    NotEnoughData(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
