use thiserror::Error;

/// Errors raised by the engine. Every fallible operation returns one of these.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    Lattice(String),

    #[error("{what} out of range: {detail}")]
    Range { what: &'static str, detail: String },

    #[error("operation needs level n >= {required}, got n = {got}")]
    Level { required: usize, got: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dense operator with {points} points exceeds cap {cap}")]
    SizeCap { points: usize, cap: usize },

    #[error(
        "large-field singularity at level {level}, block {center:?} (condition {condition:.3e})"
    )]
    Singular {
        level: usize,
        center: Vec<i64>,
        condition: f64,
    },

    #[error("iteration did not converge after {iterations} steps (last update {last_update:.3e})")]
    NotConverged { iterations: usize, last_update: f64 },

    #[error("insufficient data: {usable} usable samples, need {required}")]
    InsufficientData { usable: usize, required: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
