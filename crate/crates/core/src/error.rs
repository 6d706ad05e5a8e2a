use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("grid too small for finite differences: need at least 3 points per axis, got {0}")]
    GridTooSmall(usize),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("coincident points passed to the bare Coulomb kernel")]
    CoincidentPoints,

    #[error("{model} exchange-correlation model is not available in {dim}D")]
    UnsupportedXcModel { model: &'static str, dim: usize },

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("duplicate wavevector {0:?} in basis specification")]
    DuplicateWavevector([i32; 3]),

    #[error("density integrates to {actual}, expected {expected} (tolerance {tol:e})")]
    DensityNormalization { expected: f64, actual: f64, tol: f64 },

    #[error("evaluation point {0} is not a grid point")]
    OffGrid(String),

    #[error("resource guard: {what} requires {required} units, budget is {budget}")]
    ResourceGuard {
        what: &'static str,
        required: u128,
        budget: u128,
    },

    #[error("input is not Hermitian: {what} deviates by {deviation:e}")]
    NotHermitian { what: &'static str, deviation: f64 },

    #[error("mode {mode} out of range for {m} modes")]
    ModeOutOfRange { mode: usize, m: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("combinatorial size {size} exceeds cap {cap}")]
    CombinatorialCap { size: u128, cap: u128 },

    #[error("one-body RDM trace {trace} differs from electron count {n}")]
    TraceMismatch { trace: f64, n: f64 },

    #[error("basis provenance mismatch: kernels built from {kernels:#x}, RDMs from {rdms:#x}")]
    ProvenanceMismatch { kernels: u64, rdms: u64 },

    #[error("imaginary residue {0:e} exceeds tolerance")]
    ImaginaryResidue(f64),

    #[error("Hermitization deviation {deviation:e} exceeds abort threshold {threshold:e}")]
    HermitizationDeviation { deviation: f64, threshold: f64 },

    #[error("parameter count mismatch: expected {expected}, got {actual}")]
    ParameterCount { expected: usize, actual: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing input {path}: run `hyxc {producer}` first")]
    MissingDump { path: PathBuf, producer: &'static str },

    #[error("malformed dump {path}: {reason}")]
    MalformedDump { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
