//! Thin wrappers around `faer` decompositions operating on `ndarray` types.

use faer::prelude::Solve;
use faer_ext::{IntoFaer, IntoNdarray};
use ndarray::{Array1, Array2, ArrayView2};

/// Thin SVD. Returns `(u, s, v)` with singular values in descending order,
/// `u` of shape `(nrows, r)` and `v` of shape `(ncols, r)` where
/// `r = min(nrows, ncols)`, so `a = u * diag(s) * v^T`.
pub(crate) fn svd(a: ArrayView2<'_, f64>) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let f = a.into_faer();
    let svd = f.thin_svd().expect("SVD does not converge");
    let u = to_c_order(svd.U().into_ndarray());
    let v = to_c_order(svd.V().into_ndarray());
    let s = Array1::from_iter(svd.S().column_vector().iter().copied());
    (u, s, v)
}

/// faer exposes column-major views; materialize in ndarray's standard
/// layout so row slicing stays contiguous.
fn to_c_order(v: ndarray::ArrayView2<'_, f64>) -> Array2<f64> {
    v.as_standard_layout().into_owned()
}

pub(crate) fn singular_values(a: ArrayView2<'_, f64>) -> Vec<f64> {
    let (_, s, _) = svd(a);
    s.to_vec()
}

/// Eigendecomposition of a real square matrix, accepted only when the whole
/// spectrum is real: every eigenvalue must satisfy
/// `|imag| <= rel_tol * max(1, spectral radius)`.
///
/// Returns eigenvalues (descending) and the matching eigenvector matrix with
/// unit-norm columns whose largest-magnitude entry is positive.
pub(crate) fn eig_real(a: &Array2<f64>, rel_tol: f64) -> Option<(Vec<f64>, Array2<f64>)> {
    let k = a.nrows();
    debug_assert_eq!(k, a.ncols());
    let f = a.view().into_faer();
    let evd = f.eigen().ok()?;
    let vals = evd.S();
    let vecs = evd.U();

    let radius = (0..k)
        .map(|i| vals.column_vector()[i].norm())
        .fold(0.0_f64, f64::max);
    let tol = rel_tol * radius.max(1.0);
    let mut pairs: Vec<(f64, Vec<f64>)> = Vec::with_capacity(k);
    for j in 0..k {
        let lambda = vals.column_vector()[j];
        if lambda.im.abs() > tol {
            return None;
        }
        // For a real eigenvalue the eigenvector is real up to a complex
        // phase; rotate the largest entry onto the positive real axis.
        let mut col: Vec<faer::c64> = (0..k).map(|i| vecs[(i, j)]).collect();
        let pivot = col
            .iter()
            .cloned()
            .max_by(|x, y| x.norm().partial_cmp(&y.norm()).unwrap())
            .unwrap();
        if pivot.norm() == 0.0 {
            return None;
        }
        let phase = pivot / faer::c64::new(pivot.norm(), 0.0);
        let mut real_col = Vec::with_capacity(k);
        for z in &mut col {
            let rotated = *z / phase;
            if rotated.im.abs() > tol {
                return None;
            }
            real_col.push(rotated.re);
        }
        let norm = real_col.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return None;
        }
        for x in &mut real_col {
            *x /= norm;
        }
        pairs.push((lambda.re, real_col));
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let eigvals: Vec<f64> = pairs.iter().map(|(l, _)| *l).collect();
    let mut eigvecs = Array2::zeros((k, k));
    for (j, (_, col)) in pairs.iter().enumerate() {
        for i in 0..k {
            eigvecs[(i, j)] = col[i];
        }
    }
    Some((eigvals, eigvecs))
}

/// Solves `a x = rhs` by partial-pivot LU. The caller is responsible for
/// checking that `a` is well conditioned.
pub(crate) fn lu_solve(a: &Array2<f64>, rhs: ArrayView2<'_, f64>) -> Array2<f64> {
    let lu = a.view().into_faer().partial_piv_lu();
    let x = lu.solve(rhs.into_faer());
    to_c_order(x.as_ref().into_ndarray())
}

/// Minimum-norm least-squares solve via SVD with relative cutoff `rcond`.
/// Coincides with `a^{-1} rhs` for well-conditioned square `a`.
pub(crate) fn pinv_solve(a: &Array2<f64>, rhs: ArrayView2<'_, f64>, rcond: f64) -> Array2<f64> {
    let (u, s, v) = svd(a.view());
    let cutoff = rcond * s.iter().cloned().fold(0.0_f64, f64::max);
    let ut_b = u.t().dot(&rhs);
    let mut scaled = ut_b;
    for (i, mut row) in scaled.outer_iter_mut().enumerate() {
        let inv = if s[i] > cutoff { 1.0 / s[i] } else { 0.0 };
        row.mapv_inplace(|x| x * inv);
    }
    v.dot(&scaled)
}

pub(crate) fn determinant(a: &Array2<f64>) -> f64 {
    a.view().into_faer().determinant()
}

/// Eigendecomposition of a symmetric matrix; eigenvalues ascending.
pub(crate) fn sym_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let f = a.view().into_faer();
    let evd = f
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("symmetric eigendecomposition does not converge");
    let vals: Vec<f64> = evd.S().column_vector().iter().copied().collect();
    let vecs = to_c_order(evd.U().into_ndarray());
    (vals, vecs)
}

/// Ratio of largest to smallest singular value (`inf` for a singular matrix).
pub(crate) fn condition_number(a: &Array2<f64>) -> f64 {
    let s = singular_values(a.view());
    let max = s.first().copied().unwrap_or(0.0);
    let min = s.last().copied().unwrap_or(0.0);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
