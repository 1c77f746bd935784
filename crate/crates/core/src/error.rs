//! Crate-wide error type.

/// Errors surfaced by mesh construction, assembly, solvers, and the scheme.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("mesh needs at least one subdivision per axis")]
    EmptyMesh,

    #[error("meshes are not dyadically nested (coarse n={coarse}, fine n={fine})")]
    NotNested { coarse: u32, fine: u32 },

    #[error("sample value at vertex {vertex} is not finite")]
    NonFiniteSample { vertex: usize },

    #[error("tetrahedron {tet} is degenerate (signed volume {volume:e})")]
    DegenerateTet { tet: usize, volume: f64 },

    #[error("matrix index ({row}, {col}) out of bounds for dimension {dim}")]
    IndexOutOfBounds { row: usize, col: usize, dim: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sparsity patterns differ; linear combinations need matching patterns")]
    PatternMismatch,

    #[error("matrix diagonal entry {row} is not positive; Jacobi preconditioner undefined")]
    NonPositiveDiagonal { row: usize },

    #[error("cg did not converge within {iterations} iterations (relative residual {residual:e})")]
    CgStalled { iterations: usize, residual: f64 },

    #[error("newton did not converge within {iterations} iterations (residual norm {residual:e})")]
    NewtonStalled { iterations: usize, residual: f64 },

    #[error("newton line search found no descent (iteration {iterations}, residual norm {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("time step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("norm exponent q must satisfy q >= 2 (got {0})")]
    ExponentRange(f64),

    #[error("coarsening factor {factor} must be a power of two dividing {steps} steps")]
    BadCoarsenFactor { factor: usize, steps: usize },

    #[error("path has {got} steps, scheme expects {expected}")]
    PathLengthMismatch { expected: usize, got: usize },

    #[error("tau={tau:e} exceeds h^2={h2:e}; pass allow_tau_above_h2 to override")]
    TauAboveH2 { tau: f64, h2: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
