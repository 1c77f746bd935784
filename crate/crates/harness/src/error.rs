use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("level {level}, path {path}: {source}")]
    PathFailed {
        level: String,
        path: u64,
        source: allencahn_core::Error,
    },
    /// The coarsened increments handed to a study level disagree with a
    /// direct re-summation of the fine path. Indicates broken coupling.
    #[error(
        "coupling check failed at mode {mode}, block {block}: \
         block sum {expected:.6e} vs coarse increment {got:.6e}"
    )]
    CouplingMismatch {
        mode: usize,
        block: usize,
        expected: f64,
        got: f64,
    },
    #[error(transparent)]
    Core(#[from] allencahn_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
