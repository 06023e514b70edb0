use serde::{Deserialize, Serialize};

use crate::matrix::{dot, Matrix};
use crate::svd::svd;
use crate::LinalgError;

/// Orthonormal columns spanning a subspace of `R^dim`.
///
/// Rank 0 is allowed: intersections and residuals are legitimately empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthonormalBasis {
    dim: usize,
    columns: Matrix,
}

impl OrthonormalBasis {
    /// Validates orthonormality (|QᵀQ − I| ≤ 1e-10 entrywise).
    pub fn new(columns: Matrix) -> Result<Self, LinalgError> {
        let b = OrthonormalBasis { dim: columns.rows(), columns };
        let err = b.orthonormality_error();
        if err > 1e-10 {
            return Err(LinalgError::InvalidArgument(format!(
                "columns not orthonormal (max deviation {err:e})"
            )));
        }
        Ok(b)
    }

    pub fn empty(dim: usize) -> Self {
        OrthonormalBasis { dim, columns: Matrix::zeros(dim, 0) }
    }

    pub(crate) fn from_columns_unchecked(dim: usize, cols: &[Vec<f64>]) -> Self {
        OrthonormalBasis { dim, columns: Matrix::from_columns(dim, cols) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.columns.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.rank() == 0
    }

    pub fn columns(&self) -> &Matrix {
        &self.columns
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.columns.column(j)
    }

    pub fn vectors(&self) -> Vec<Vec<f64>> {
        self.columns.columns()
    }

    /// First `k` columns.
    pub fn truncate(&self, k: usize) -> OrthonormalBasis {
        let k = k.min(self.rank());
        let cols: Vec<Vec<f64>> = (0..k).map(|j| self.column(j)).collect();
        OrthonormalBasis::from_columns_unchecked(self.dim, &cols)
    }

    /// Keeps the listed columns, in the listed order.
    pub fn select(&self, idx: &[usize]) -> OrthonormalBasis {
        let cols: Vec<Vec<f64>> = idx.iter().map(|&j| self.column(j)).collect();
        OrthonormalBasis::from_columns_unchecked(self.dim, &cols)
    }

    /// `Bᵀ·x`
    pub fn coords(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rank()).map(|j| {
            let mut s = 0.0;
            for i in 0..self.dim {
                s += self.columns.get(i, j) * x[i];
            }
            s
        })
        .collect()
    }

    pub fn orthonormality_error(&self) -> f64 {
        let g = self.columns.t_matmul(&self.columns).expect("gram shape");
        let mut worst: f64 = 0.0;
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(i, j) - target).abs());
            }
        }
        worst
    }
}

/// Which side of a weight matrix a basis acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// basis lives in the row space index (dimension = rows); result (I − BBᵀ)·W
    Rows,
    /// basis lives in the column index (dimension = cols); result W·(I − BBᵀ)
    Cols,
}

/// Modified Gram–Schmidt with one re-orthogonalization pass; columns whose
/// remaining norm is below `tol` are dropped.
pub fn orthonormalize(a: &Matrix, tol: f64) -> Result<OrthonormalBasis, LinalgError> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(LinalgError::Empty);
    }
    let q = gram_schmidt(a.rows(), a.columns(), tol);
    if q.is_empty() {
        return Err(LinalgError::EmptyBasis);
    }
    Ok(OrthonormalBasis::from_columns_unchecked(a.rows(), &q))
}

/// Like [`orthonormalize`] but an all-dropped input gives an empty basis.
pub(crate) fn orthonormalize_or_empty(dim: usize, cols: Vec<Vec<f64>>, tol: f64) -> OrthonormalBasis {
    let q = gram_schmidt(dim, cols, tol);
    OrthonormalBasis::from_columns_unchecked(dim, &q)
}

fn gram_schmidt(dim: usize, cols: Vec<Vec<f64>>, tol: f64) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    for mut v in cols {
        debug_assert_eq!(v.len(), dim);
        for _pass in 0..2 {
            for qk in &q {
                let d = dot(qk, &v);
                for (x, y) in v.iter_mut().zip(qk) {
                    *x -= d * y;
                }
            }
        }
        let n = dot(&v, &v).sqrt();
        if n >= tol && n > 0.0 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    q
}

impl OrthonormalBasis {
    /// Orthonormalizes a list of vectors; may return an empty basis.
    pub fn span_of(dim: usize, cols: Vec<Vec<f64>>, tol: f64) -> OrthonormalBasis {
        orthonormalize_or_empty(dim, cols, tol)
    }
}

/// `P = B·Bᵀ`
pub fn projector(b: &OrthonormalBasis) -> Matrix {
    b.columns.matmul_t(&b.columns).expect("projector shape")
}

pub fn project_out(w: &Matrix, b: &OrthonormalBasis, side: Side) -> Result<Matrix, LinalgError> {
    let needed = match side {
        Side::Rows => w.rows(),
        Side::Cols => w.cols(),
    };
    if b.dim() != needed {
        return Err(LinalgError::DimensionMismatch(format!(
            "basis dim {} vs {:?} dimension {} of {}x{} matrix",
            b.dim(),
            side,
            needed,
            w.rows(),
            w.cols()
        )));
    }
    if b.is_empty() {
        return Ok(w.clone());
    }
    let bm = b.columns();
    match side {
        Side::Rows => {
            // W − B(BᵀW)
            let coef = bm.t_matmul(w)?;
            let removed = bm.matmul(&coef)?;
            w.sub(&removed)
        }
        Side::Cols => {
            // W − (WB)Bᵀ
            let coef = w.matmul(bm)?;
            let removed = coef.matmul_t(bm)?;
            w.sub(&removed)
        }
    }
}

/// Principal angles in radians, ascending.
pub fn principal_angles(a: &OrthonormalBasis, b: &OrthonormalBasis) -> Result<Vec<f64>, LinalgError> {
    if a.dim() != b.dim() {
        return Err(LinalgError::DimensionMismatch(format!(
            "ambient dims {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Ok(Vec::new());
    }
    // cosines from AᵀB; sines from the part of B outside span(A). Small angles
    // are taken from the sines, where arccos loses half the digits.
    let ab = a.columns().t_matmul(b.columns())?;
    let cos = svd(&ab)?.singular_values;
    let outside = b.columns().sub(&a.columns().matmul(&ab)?)?;
    let mut sin = svd(&outside)?.singular_values;
    sin.reverse();
    let k = a.rank().min(b.rank());
    Ok((0..k)
        .map(|i| {
            let c = cos[i].clamp(0.0, 1.0);
            let s = sin.get(i).copied().unwrap_or(0.0).clamp(0.0, 1.0);
            if c * c >= 0.5 {
                s.asin()
            } else {
                c.acos()
            }
        })
        .collect())
}

/// Directions lying (within `cos_tol`) in every input span.
///
/// Candidates are eigenvectors of the averaged projector (1/L)·Σ BᵢBᵢᵀ with
/// eigenvalue ≥ cos_tol²; each candidate must then satisfy ‖Bᵢᵀd‖ ≥ cos_tol
/// for every i.
pub fn subspace_intersection(bases: &[OrthonormalBasis], cos_tol: f64) -> Result<OrthonormalBasis, LinalgError> {
    if bases.len() < 2 {
        return Err(LinalgError::InvalidArgument("need at least two bases".into()));
    }
    if !(cos_tol > 0.0 && cos_tol < 1.0) {
        return Err(LinalgError::InvalidArgument(format!("cos_tol {cos_tol} outside (0,1)")));
    }
    let dim = bases[0].dim();
    if bases.iter().any(|b| b.dim() != dim) {
        return Err(LinalgError::DimensionMismatch("bases differ in ambient dimension".into()));
    }
    if bases.iter().any(|b| b.is_empty()) {
        return Ok(OrthonormalBasis::empty(dim));
    }
    let l = bases.len() as f64;
    let mut avg = Matrix::zeros(dim, dim);
    for b in bases {
        avg.axpy(1.0 / l, &projector(b))?;
    }
    let eig = svd(&avg)?;
    let mut keep = Vec::new();
    for (j, &lambda) in eig.singular_values.iter().enumerate() {
        if lambda < cos_tol * cos_tol {
            break;
        }
        let d = eig.u.column(j);
        let inside = bases.iter().all(|b| {
            let c = b.coords(&d);
            dot(&c, &c).sqrt() >= cos_tol
        });
        if inside {
            keep.push(j);
        }
    }
    Ok(eig.u.select(&keep))
}
