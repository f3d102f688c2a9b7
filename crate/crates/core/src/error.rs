//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid {width}x{height} is too small (need at least 3x3)")]
    GridTooSmall { width: usize, height: usize },

    #[error("field `{field}` has {got} cells, expected {expected}")]
    ShapeMismatch {
        field: String,
        expected: usize,
        got: usize,
    },

    #[error("coordinate ({x}, {y}) is outside the {width}x{height} grid")]
    OutOfBounds {
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },

    #[error("world invariant violated: {0}")]
    Invariant(String),

    #[error("invalid genome: {0}")]
    InvalidGenome(String),

    #[error("genome contains a cycle through node {0}")]
    Cycle(u32),

    #[error("expected {expected} inputs, got {got}")]
    InputLength { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("fitness of member {index} is not finite ({value})")]
    NonFiniteFitness { index: usize, value: f64 },

    #[error("convert_mass expects a non-positive change, got {0}")]
    PositiveConversion(f64),

    #[error("fluid instability at step {step}, cell ({x}, {y}): {reason}")]
    Instability {
        step: u64,
        x: usize,
        y: usize,
        reason: String,
    },

    #[error("CFL condition violated: max |u|*dt = {0} > 0.5")]
    Cfl(f64),

    #[error("invalid source at cell ({x}, {y}): {reason}")]
    InvalidSource { x: usize, y: usize, reason: String },

    #[error("seed cell ({x}, {y}) {reason}")]
    Seed { x: usize, y: usize, reason: String },

    #[error("invalid perturbation: {0}")]
    Perturbation(String),

    #[error("unsatisfiable environment: {0}")]
    Environment(String),

    #[error("empty score list")]
    EmptyScores,

    #[error("{0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
