use linalg_core::{svd, Matrix, OrthonormalBasis};
use serde::{Deserialize, Serialize};
use testbed::{Layer, WeightDelta};

use crate::ToolkitError;

/// Low-rank basis of one language's update to one layer.
///
/// Bases are output-facing: weights are stored (in × out), so the directions
/// live in the column index and are right singular vectors of the delta.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSubspace {
    pub lang_id: String,
    pub layer: Layer,
    pub basis: OrthonormalBasis,
    /// aligned with basis columns, non-increasing
    pub singular_values: Vec<f64>,
    /// ‖Δ‖_F² of the layer update the basis came from
    pub total_energy: f64,
}

impl TaskSubspace {
    pub fn rank(&self) -> usize {
        self.basis.rank()
    }

    /// Σ σ_i² over the basis divided by ‖Δ‖_F².
    pub fn captured_energy(&self) -> f64 {
        if self.total_energy == 0.0 {
            return 0.0;
        }
        self.singular_values.iter().map(|s| s * s).sum::<f64>() / self.total_energy
    }

    /// Wraps an arbitrary basis of the delta's output space, scoring each
    /// direction b by ‖Δ·b‖ and ordering the columns by that score.
    pub fn from_basis(lang_id: &str, layer: Layer, delta: &WeightDelta, basis: OrthonormalBasis) -> Result<TaskSubspace, ToolkitError> {
        let d = delta.layer(layer);
        if basis.dim() != d.cols() {
            return Err(ToolkitError::DimensionMismatch(format!("basis dim {} vs layer width {}", basis.dim(), d.cols())));
        }
        let mut scored: Vec<(f64, usize)> = (0..basis.rank())
            .map(|j| {
                let b = basis.column(j);
                let s = (0..d.rows()).map(|i| linalg_core::dot(d.row(i), &b).powi(2)).sum::<f64>().sqrt();
                (s, j)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let order: Vec<usize> = scored.iter().map(|s| s.1).collect();
        Ok(TaskSubspace {
            lang_id: lang_id.to_string(),
            layer,
            basis: basis.select(&order),
            singular_values: scored.iter().map(|s| s.0).collect(),
            total_energy: d.frobenius().powi(2),
        })
    }
}

/// Top-`rank` directions of one layer of a task update. Directions with a zero
/// singular value are not part of the subspace, so the rank can come out lower.
pub fn extract_task_subspace(lang_id: &str, delta: &WeightDelta, layer: Layer, rank: usize) -> Result<TaskSubspace, ToolkitError> {
    extract_from_matrix(lang_id, layer, delta.layer(layer), rank)
}

pub fn extract_from_matrix(lang_id: &str, layer: Layer, d: &Matrix, rank: usize) -> Result<TaskSubspace, ToolkitError> {
    let max = d.rows().min(d.cols());
    if rank == 0 || rank > max {
        return Err(ToolkitError::InvalidRank { rank, max });
    }
    let s = svd(d)?;
    let smax = s.singular_values[0];
    let keep: Vec<usize> = (0..rank).filter(|&i| smax > 0.0 && s.singular_values[i] > smax * 1e-12).collect();
    Ok(TaskSubspace {
        lang_id: lang_id.to_string(),
        layer,
        basis: s.v.select(&keep),
        singular_values: keep.iter().map(|&i| s.singular_values[i]).collect(),
        total_energy: s.singular_values.iter().map(|x| x * x).sum(),
    })
}
