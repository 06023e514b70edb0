//! Dense linear algebra for the unlearning lab: a row-major [`Matrix`], one-sided
//! Jacobi SVD, Gram–Schmidt orthonormalization and the subspace operations
//! (projectors, principal angles, intersection) built on top of them.

mod basis;
mod matrix;
mod svd;

pub use basis::{
    orthonormalize, principal_angles, project_out, projector, subspace_intersection,
    OrthonormalBasis, Side,
};
pub use matrix::{dot, norm, Matrix};
pub use svd::{svd, SvdResult, JACOBI_TOL, MAX_SWEEPS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry at flat index {index}")]
    NonFinite { index: usize },
    #[error("matrix has no rows or no columns")]
    Empty,
    #[error("SVD did not converge after {sweeps} sweeps")]
    NonConvergence { sweeps: usize },
    #[error("every column fell below the drop tolerance")]
    EmptyBasis,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
