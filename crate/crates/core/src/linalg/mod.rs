//! Sparse linear algebra used by the deformation solver and the mesh hierarchy.

mod cholesky;
mod sparse;

pub use cholesky::{CholeskyError, CholeskyFactor, SymbolicCholesky};
pub use sparse::SparseMatrix;
