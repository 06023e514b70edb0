use serde::{Deserialize, Serialize};

use crate::basis::OrthonormalBasis;
use crate::matrix::{dot, Matrix};
use crate::LinalgError;

pub const MAX_SWEEPS: usize = 60;
/// A column pair is rotated while |a_p·a_q| > JACOBI_TOL·‖a_p‖‖a_q‖.
pub const JACOBI_TOL: f64 = 1e-12;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SvdResult {
    pub u: OrthonormalBasis,
    pub singular_values: Vec<f64>,
    pub v: OrthonormalBasis,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let u = self.u.columns();
        let v = self.v.columns();
        let mut us = u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.singular_values.iter().enumerate() {
                us.set(i, j, u.get(i, j) * s);
            }
        }
        us.matmul_t(v).expect("svd factor shapes")
    }
}

/// Thin SVD by one-sided Jacobi rotations.
pub fn svd(a: &Matrix) -> Result<SvdResult, LinalgError> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(LinalgError::Empty);
    }
    if !a.is_finite() {
        let index = a.as_slice().iter().position(|v| !v.is_finite()).unwrap_or(0);
        return Err(LinalgError::NonFinite { index });
    }
    if a.rows() < a.cols() {
        let t = jacobi(&a.transpose())?;
        return Ok(SvdResult { u: t.v, singular_values: t.singular_values, v: t.u });
    }
    jacobi(a)
}

// requires rows >= cols
fn jacobi(a: &Matrix) -> Result<SvdResult, LinalgError> {
    let (m, n) = a.shape();
    let mut cols: Vec<Vec<f64>> = a.columns();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let mut sq: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = sq[p];
                let beta = sq[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(&cols[p], &cols[q]);
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
                sq[p] = dot(&cols[p], &cols[p]);
                sq[q] = dot(&cols[q], &cols[q]);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::NonConvergence { sweeps: MAX_SWEEPS });
    }

    let sigma: Vec<f64> = sq.iter().map(|s| s.sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps the result deterministic for ties
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap());
    let smax = sigma[order[0]];
    let negligible = smax * (m as f64) * f64::EPSILON;

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        if sigma[j] > negligible && sigma[j] > 0.0 {
            u_cols.push(cols[j].iter().map(|x| x / sigma[j]).collect());
        } else {
            u_cols.push(vec![0.0; m]);
            deficient.push(slot);
        }
    }
    complete(&mut u_cols, &deficient, m);

    let singular_values = order.iter().map(|&j| sigma[j]).collect();
    let v_cols: Vec<Vec<f64>> = order.iter().map(|&j| v[j].clone()).collect();
    Ok(SvdResult {
        u: OrthonormalBasis::from_columns_unchecked(m, &u_cols),
        singular_values,
        v: OrthonormalBasis::from_columns_unchecked(n, &v_cols),
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let ap = &mut lo[p];
    let aq = &mut hi[0];
    for (x, y) in ap.iter_mut().zip(aq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

// Fills the deficient slots with unit vectors orthogonal to every other
// column, choosing each time the coordinate axis with the largest residual.
// For orthonormal columns c_k the squared residual of axis i is
// 1 − Σ_k c_k[i]², so the choice needs no trial projections.
fn complete(cols: &mut [Vec<f64>], slots: &[usize], m: usize) {
    let mut filled: Vec<bool> = (0..cols.len()).map(|k| !slots.contains(&k)).collect();
    let mut covered = vec![0.0; m];
    for c in cols.iter().zip(&filled).filter(|(_, f)| **f).map(|(c, _)| c) {
        for (a, x) in covered.iter_mut().zip(c) {
            *a += x * x;
        }
    }
    for &slot in slots {
        let axis = (0..m).fold(0, |best, i| if covered[i] < covered[best] { i } else { best });
        let mut cand = vec![0.0; m];
        cand[axis] = 1.0;
        for _ in 0..2 {
            for (k, c) in cols.iter().enumerate() {
                if !filled[k] {
                    continue;
                }
                let d = dot(&cand, c);
                for (x, y) in cand.iter_mut().zip(c) {
                    *x -= d * y;
                }
            }
        }
        let nrm = dot(&cand, &cand).sqrt();
        assert!(nrm > 1e-8, "cannot complete an orthonormal set");
        let unit: Vec<f64> = cand.into_iter().map(|x| x / nrm).collect();
        for (a, x) in covered.iter_mut().zip(&unit) {
            *a += x * x;
        }
        cols[slot] = unit;
        filled[slot] = true;
    }
}
