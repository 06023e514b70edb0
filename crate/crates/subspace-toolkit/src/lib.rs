//! Geometry of per-language task subspaces: extraction from weight updates,
//! the shared interlingua and language residuals, the two projection
//! interventions, and point clouds for t-SNE.

mod cloud;
mod interlingua;
mod subspace;
mod tsne;

pub use cloud::{basis_point_cloud, cloud_cosines, tsne_csv, CloudPoint, TSNE_CSV_HEADER};
pub use interlingua::{compute_interlingua, overlap_report, remove_residual, remove_shared, InterlinguaDecomposition, RESIDUAL_TOL};
pub use subspace::{extract_from_matrix, extract_task_subspace, TaskSubspace};
pub use tsne::{silhouette, tsne_embed, TsneConfig, MAX_POINTS, MIN_POINTS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ToolkitError {
    #[error("rank {rank} outside 1..={max}")]
    InvalidRank { rank: usize, max: usize },
    #[error("need at least two subspaces, got {0}")]
    TooFewSubspaces(usize),
    #[error("subspaces come from different layers")]
    MixedLayers,
    #[error("unknown language {0}")]
    UnknownLanguage(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("t-SNE needs {min}..={max} points, got {n}")]
    PointCount { n: usize, min: usize, max: usize },
    #[error("perplexity {perplexity} infeasible for {n} points (must be in (1, n/3))")]
    PerplexityInfeasible { perplexity: f64, n: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error(transparent)]
    Linalg(#[from] linalg_core::LinalgError),
}
