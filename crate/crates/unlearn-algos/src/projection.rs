use linalg_core::{project_out, svd, Matrix, OrthonormalBasis, Side};
use serde::{Deserialize, Serialize};
use testbed::{Layer, ToyModel, WeightDelta};

use crate::{Diagnostics, Method, UnlearnConfig, UnlearnError, UnlearnResult};

/// Re-orthonormalization drop tolerance used during discrimination.
pub const DROP_TOL: f64 = 1e-8;

/// Weights are stored input-major (in × out), so the output-facing directions
/// of a layer live in its column index: they are the right singular vectors of
/// a stored delta, and removal multiplies from the right.
pub const PROJECTION_SIDE: Side = Side::Cols;

/// params − scale·Δ on {w1, w2}.
pub fn task_vector_negate(m: &ToyModel, delta: &WeightDelta, scale: f64) -> Result<ToyModel, UnlearnError> {
    Ok(delta.apply(m, -scale)?)
}

/// Top-`rank` output-facing directions of a layer update, with their
/// singular values. Directions with zero singular value are left out.
pub fn output_subspace(delta: &Matrix, rank: usize) -> Result<(OrthonormalBasis, Vec<f64>), UnlearnError> {
    let s = svd(delta)?;
    let smax = s.singular_values.first().copied().unwrap_or(0.0);
    let keep: Vec<usize> =
        (0..rank.min(s.singular_values.len())).filter(|&i| smax > 0.0 && s.singular_values[i] > smax * 1e-12).collect();
    let sv = keep.iter().map(|&i| s.singular_values[i]).collect();
    Ok((s.v.select(&keep), sv))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerArtifacts {
    pub layer: Layer,
    pub forget: OrthonormalBasis,
    pub forget_singular_values: Vec<f64>,
    /// orthonormalized union of the control subspaces
    pub control: OrthonormalBasis,
    pub discriminated: OrthonormalBasis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceArtifacts {
    pub layers: Vec<LayerArtifacts>,
}

/// Forget directions that are not explained by the control tasks.
///
/// A forget direction whose cosine with the control span exceeds `cos_tol` is
/// dropped; the survivors are projected onto the orthogonal complement of the
/// control span and re-orthonormalized.
pub fn discriminate(forget: &OrthonormalBasis, control: &OrthonormalBasis, cos_tol: f64) -> OrthonormalBasis {
    let dim = forget.dim();
    let mut kept = Vec::new();
    for b in forget.vectors() {
        let c = control.coords(&b);
        let cos = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if cos > cos_tol {
            continue;
        }
        let mut r = b.clone();
        for (j, cj) in c.iter().enumerate() {
            let q = control.columns().column(j);
            for (x, y) in r.iter_mut().zip(&q) {
                *x -= cj * y;
            }
        }
        kept.push(r);
    }
    OrthonormalBasis::span_of(dim, kept, DROP_TOL)
}

/// UNLEARN: extract the forget subspace of each layer, discriminate it against
/// the control-task subspaces, and project it out of the weights.
pub fn unlearn_projection(
    m: &ToyModel,
    forget_delta: &WeightDelta,
    control_deltas: &[WeightDelta],
    cfg: &UnlearnConfig,
) -> Result<UnlearnResult, UnlearnError> {
    cfg.validate()?;
    if control_deltas.is_empty() {
        return Err(UnlearnError::InvalidConfig("UNLEARN needs at least one control delta".into()));
    }
    let mut model = m.clone();
    let mut diag = Diagnostics::new(Method::Unlearn, Vec::new());
    diag.projection_side = Some("output: right singular vectors of the stored in×out update, W ← W(I − DDᵀ)".into());
    let mut layers = Vec::new();
    for &layer in &cfg.layers {
        let w = layer.of(m);
        let fd = forget_delta.layer(layer);
        if fd.shape() != w.shape() || control_deltas.iter().any(|c| c.layer(layer).shape() != w.shape()) {
            return Err(UnlearnError::Testbed(testbed::TestbedError::ShapeMismatch));
        }
        let max_rank = w.rows().min(w.cols());
        if cfg.rank > max_rank {
            return Err(UnlearnError::InvalidConfig(format!("rank {} exceeds {} for {}", cfg.rank, max_rank, layer.name())));
        }
        let (forget, forget_sv) = output_subspace(fd, cfg.rank)?;
        let mut ctrl_vecs = Vec::new();
        for c in control_deltas {
            ctrl_vecs.extend(output_subspace(c.layer(layer), cfg.rank)?.0.vectors());
        }
        let control = OrthonormalBasis::span_of(w.cols(), ctrl_vecs, DROP_TOL);
        let disc = discriminate(&forget, &control, cfg.discrim_cos_tol);
        diag.kept_rank.push((layer, forget.rank(), disc.rank()));
        if disc.is_empty() {
            diag.warnings.push(format!("{}: discriminated subspace is empty, layer left unchanged", layer.name()));
        } else {
            *layer.of_mut(&mut model) = project_out(w, &disc, PROJECTION_SIDE)?;
        }
        layers.push(LayerArtifacts { layer, forget, forget_singular_values: forget_sv, control, discriminated: disc });
    }
    Ok(UnlearnResult { model, diagnostics: diag, subspace_artifacts: Some(SubspaceArtifacts { layers }) })
}
