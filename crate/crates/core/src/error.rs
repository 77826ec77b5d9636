use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("triangle {triangle} references vertex {index}, but the mesh has {n_vertices} vertices")]
    DanglingIndex {
        triangle: usize,
        index: usize,
        n_vertices: usize,
    },

    #[error("triangle {triangle} has area {area:e} (degenerate)")]
    DegenerateTriangle { triangle: usize, area: f64 },

    #[error("domain is not connected ({components} components)")]
    Disconnected { components: usize },

    #[error("adjacency matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("adjacency matrix is not symmetric: |W[{i}][{j}] - W[{j}][{i}]| = {diff:e}")]
    Asymmetric { i: usize, j: usize, diff: f64 },

    #[error("negative weight W[{i}][{j}] = {value}")]
    NegativeWeight { i: usize, j: usize, value: f64 },

    #[error("requested {requested} modes but the domain has dimension {dimension}")]
    TooManyModes { requested: usize, dimension: usize },

    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("basis mismatch: expected basis {expected}, got {got}")]
    BasisMismatch { expected: String, got: String },

    #[error("time grid is not strictly increasing at index {index}")]
    NonIncreasingTimes { index: usize },

    #[error("simulation blew up at t = {time}")]
    BlowUp { time: f64 },

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("zero-norm reference at step {step}")]
    ZeroNorm { step: usize },

    #[error("stage order violation: {0}")]
    StageOrder(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::StageOrder(_) => 3,
            Error::BlowUp { .. }
            | Error::Divergence { .. }
            | Error::NoConvergence(_)
            | Error::NotPositiveDefinite { .. } => 4,
            _ => 2,
        }
    }
}
