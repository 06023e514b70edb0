use std::collections::BTreeMap;

use linalg_core::{principal_angles, project_out, subspace_intersection, Matrix, OrthonormalBasis, Side};
use serde::{Deserialize, Serialize};
use testbed::{Layer, ToyModel};

use crate::subspace::TaskSubspace;
use crate::ToolkitError;

/// Drop tolerance when re-orthonormalizing residuals.
pub const RESIDUAL_TOL: f64 = 1e-8;

/// Shared (interlingua) directions of one layer and what is left of each
/// language's subspace once they are removed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterlinguaDecomposition {
    pub layer: Layer,
    pub shared: OrthonormalBasis,
    pub residuals: BTreeMap<String, OrthonormalBasis>,
}

pub fn compute_interlingua(subspaces: &[TaskSubspace], cos_tol: f64) -> Result<InterlinguaDecomposition, ToolkitError> {
    if subspaces.len() < 2 {
        return Err(ToolkitError::TooFewSubspaces(subspaces.len()));
    }
    let layer = subspaces[0].layer;
    if subspaces.iter().any(|s| s.layer != layer) {
        return Err(ToolkitError::MixedLayers);
    }
    let bases: Vec<OrthonormalBasis> = subspaces.iter().map(|s| s.basis.clone()).collect();
    let shared = subspace_intersection(&bases, cos_tol)?;
    let mut residuals = BTreeMap::new();
    for s in subspaces {
        res_insert(&mut residuals, s, &shared)?;
    }
    Ok(InterlinguaDecomposition { layer, shared, residuals })
}

/// orth((I − P_S)·B_ℓ), taken twice so the result stays orthogonal to S
/// even when B_ℓ nearly lies inside it.
fn res_insert(out: &mut BTreeMap<String, OrthonormalBasis>, s: &TaskSubspace, shared: &OrthonormalBasis) -> Result<(), ToolkitError> {
    let mut res = s.basis.clone();
    for _ in 0..2 {
        if res.is_empty() {
            break;
        }
        let rows = project_out(&res.columns().transpose(), shared, Side::Cols)?;
        res = OrthonormalBasis::span_of(s.basis.dim(), rows.transpose().columns(), RESIDUAL_TOL);
    }
    out.insert(s.lang_id.clone(), res);
    Ok(())
}

fn apply(m: &ToyModel, parts: &[(Layer, &OrthonormalBasis)]) -> Result<ToyModel, ToolkitError> {
    let mut out = m.clone();
    for &(layer, b) in parts {
        let w = layer.of(&out);
        if b.dim() != w.cols() {
            return Err(ToolkitError::DimensionMismatch(format!("{} has {} columns, basis dim {}", layer.name(), w.cols(), b.dim())));
        }
        if !b.is_empty() {
            let nw = project_out(w, b, Side::Cols)?;
            *layer.of_mut(&mut out) = nw;
        }
    }
    Ok(out)
}

/// Projects every layer's weights off its shared interlingua.
pub fn remove_shared(m: &ToyModel, decomps: &[InterlinguaDecomposition]) -> Result<ToyModel, ToolkitError> {
    let parts: Vec<(Layer, &OrthonormalBasis)> = decomps.iter().map(|d| (d.layer, &d.shared)).collect();
    apply(m, &parts)
}

/// Projects every layer's weights off the residual of one language.
pub fn remove_residual(m: &ToyModel, decomps: &[InterlinguaDecomposition], lang_id: &str) -> Result<ToyModel, ToolkitError> {
    let mut parts = Vec::new();
    for d in decomps {
        let r = d.residuals.get(lang_id).ok_or_else(|| ToolkitError::UnknownLanguage(lang_id.to_string()))?;
        parts.push((d.layer, r));
    }
    apply(m, &parts)
}

/// Mean cosine of the principal angles for every pair of subspaces; 1 on the
/// diagonal. A pair involving an empty subspace scores 0.
pub fn overlap_report(subspaces: &[TaskSubspace]) -> Result<Matrix, ToolkitError> {
    if subspaces.len() < 2 {
        return Err(ToolkitError::TooFewSubspaces(subspaces.len()));
    }
    if subspaces.iter().any(|s| s.layer != subspaces[0].layer) {
        return Err(ToolkitError::MixedLayers);
    }
    let n = subspaces.len();
    let mut out = Matrix::identity(n);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&subspaces[i].basis, &subspaces[j].basis);
            let v = if a.is_empty() || b.is_empty() {
                0.0
            } else {
                let ang = principal_angles(a, b)?;
                (ang.iter().map(|t| t.cos()).sum::<f64>() / ang.len() as f64).clamp(0.0, 1.0)
            };
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    Ok(out)
}
