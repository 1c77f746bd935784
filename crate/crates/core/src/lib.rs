//! Finite element discretization of the stochastic Allen-Cahn equation on
//! the unit cube: structured Kuhn meshes, P1 assembly, a semi-implicit Euler
//! time stepper with multiplicative noise, and the pieces needed to study
//! convergence rates and the regularity of the stochastic convolution.
//!
//! Everything numerical is generic over the scalar type through [`Real`]
//! (implemented for `f32` and `f64`); the `*64` aliases below cover the
//! common case. Random increments are always drawn in `f64` and rounded, so
//! both precisions see the same underlying sample paths.

pub mod error;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod noise;
pub mod probe;
pub mod reference;
pub mod scalar;
pub mod scheme;

pub use error::{Error, Result};
pub use scalar::Real;

/// Structured tetrahedral mesh of the unit cube, `f64` scalars.
pub type Mesh64 = mesh::Mesh<f64>;
/// P1 function with homogeneous Dirichlet data, `f64` scalars.
pub type FeFunction64 = fem::FeFunction<f64>;
/// Symmetric sparse matrix in CSR form, `f64` scalars.
pub type SparseMatrix64 = linalg::SparseMatrix<f64>;
/// Iterative solver settings, `f64` scalars.
pub type SolverConfig64 = linalg::SolverConfig<f64>;
/// Quadrature rule on the reference tetrahedron, `f64` scalars.
pub type Quadrature64 = fem::Quadrature<f64>;
