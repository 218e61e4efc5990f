use thiserror::Error;

/// Errors produced by the solvers, builders and report writers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported dimension n = {0} (expected 1 or 2)")]
    UnsupportedDimension(usize),
    #[error("invalid resolution N = {0}: power of two required, N >= 8")]
    InvalidResolution(usize),
    #[error("field length {got} does not match grid size {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite value in field at index {0}")]
    NonFinite(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("indefinite background: min eigenvalue {min_eig:e} at point {point}")]
    IndefiniteBackground { min_eig: f64, point: usize },
    #[error("linear solve stalled after {iterations} iterations, residual {residual:e}")]
    LinearSolveStalled { iterations: usize, residual: f64 },
    #[error("lost positivity at step {step}")]
    LostPositivity { step: usize },
    #[error("newton stalled after {iterations} iterations, residual {residual:e}")]
    NewtonStalled { iterations: usize, residual: f64 },
    #[error("timestep {dt:e} too large for lambda_F = {lambda}")]
    TimestepTooLarge { dt: f64, lambda: f64 },
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("evaluation outside certified box: t = {t}, r = {r}")]
    OutsideBox { t: f64, r: f64 },
    #[error("not klt: exponent {0} <= -1")]
    NotKlt(f64),
    #[error("flow failed at node {node}: {source}")]
    FlowStep {
        node: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("config error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },
    #[error("config key `{key}`: {msg}")]
    ConfigKey { key: String, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Node index of a failed flow step, if any.
    pub fn failing_node(&self) -> Option<usize> {
        match self {
            Error::FlowStep { node, .. } => Some(*node),
            _ => None,
        }
    }
}
