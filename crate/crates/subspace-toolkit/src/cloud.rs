use std::fmt::Write;

use serde::{Deserialize, Serialize};
use testbed::Layer;

use crate::subspace::TaskSubspace;
use crate::ToolkitError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudPoint {
    pub vector: Vec<f64>,
    pub lang_id: String,
    /// 1-based position in the language's singular-value order
    pub sv_rank: usize,
    pub layer: Layer,
}

pub fn basis_point_cloud(subspaces: &[TaskSubspace]) -> Result<Vec<CloudPoint>, ToolkitError> {
    if subspaces.is_empty() {
        return Err(ToolkitError::TooFewSubspaces(0));
    }
    Ok(subspaces
        .iter()
        .flat_map(|s| {
            s.basis.vectors().into_iter().enumerate().map(move |(k, v)| CloudPoint {
                vector: v,
                lang_id: s.lang_id.clone(),
                sv_rank: k + 1,
                layer: s.layer,
            })
        })
        .collect())
}

pub const TSNE_CSV_HEADER: &str = "x,y,lang_id,sv_rank,layer";

/// One row per point; coordinates printed with 10 decimals.
pub fn tsne_csv(points: &[CloudPoint], coords: &[[f64; 2]]) -> Result<String, ToolkitError> {
    if points.len() != coords.len() {
        return Err(ToolkitError::DimensionMismatch(format!("{} points vs {} coordinates", points.len(), coords.len())));
    }
    let mut out = String::from(TSNE_CSV_HEADER);
    out.push('\n');
    for (p, c) in points.iter().zip(coords) {
        let f = |x: f64| if x == 0.0 { 0.0 } else { x };
        writeln!(out, "{:.10},{:.10},{},{},{}", f(c[0]), f(c[1]), p.lang_id, p.sv_rank, p.layer.name()).expect("string write");
    }
    Ok(out)
}

/// How well cloud points find a partner in the other languages: for each
/// point, the largest |cos| to any point of each other language, averaged.
/// Points are split by whether they lie mostly (‖P_S v‖² ≥ ½) in the shared
/// span. Returns (shared, residual); NaN when a class is empty.
pub fn cloud_cosines(points: &[CloudPoint], shared: &linalg_core::OrthonormalBasis) -> (f64, f64) {
    let mut langs: Vec<&str> = points.iter().map(|p| p.lang_id.as_str()).collect();
    langs.sort_unstable();
    langs.dedup();
    let (mut s, mut ns, mut r, mut nr) = (0.0, 0usize, 0.0, 0usize);
    for p in points {
        let c = shared.coords(&p.vector);
        let in_shared = linalg_core::dot(&c, &c) >= 0.5;
        for l in langs.iter().filter(|l| **l != p.lang_id) {
            let best = points
                .iter()
                .filter(|q| q.lang_id == *l)
                .map(|q| linalg_core::dot(&p.vector, &q.vector).abs())
                .fold(0.0, f64::max);
            if in_shared {
                s += best;
                ns += 1;
            } else {
                r += best;
                nr += 1;
            }
        }
    }
    let mean = |t: f64, k: usize| if k == 0 { f64::NAN } else { t / k as f64 };
    (mean(s, ns), mean(r, nr))
}
