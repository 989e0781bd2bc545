use thiserror::Error;

/// Every failure the library reports.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("fixed-point iteration stalled: residual {residual:e} after {iterations} iterations")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("no admissible orbits: E0 = {e0} does not exceed the potential minimum {psi_min}")]
    EmptySupport { e0: f64, psi_min: f64 },
    #[error("density support spans only {cells} grid cells (need at least 8)")]
    GridTooCoarse { cells: usize },
    #[error("effective potential has no interior minimum for L = {l}")]
    NoMinimum { l: f64 },
    #[error("{what} = {value} outside admissible range [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("period not increasing in E at E = {e}, L = {l}: dT/dE = {dt_de:e}")]
    MonotonicityViolation { e: f64, l: f64, dt_de: f64 },
    #[error("phase point lies at the elliptic point, angle undefined")]
    AtEllipticPoint,
    #[error("angle resolution {resolution} below 4*M_max = {required}")]
    ResolutionTooLow { resolution: usize, required: usize },
    #[error("field and table use different action grids")]
    GridMismatch,
    #[error("mode m = 0 is not allowed here")]
    ZeroMode,
    #[error("only {found} envelope maxima in window (need at least 8)")]
    TooSparse { found: usize },
    #[error("design matrix condition number {cond:e} exceeds 1e8")]
    IllConditioned { cond: f64 },
    #[error("verification failed: {0}")]
    VerificationFailed(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
