//! Small dense helpers shared by the estimator, the set operations and the filter.

use nalgebra::{DMatrix, DVector};

/// Replaces `m` by `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix. Zero for an empty matrix.
pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).into_iter().reduce(f64::min).unwrap_or(0.0)
}

/// Largest eigenvalue of a symmetric matrix. Zero for an empty matrix.
pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).into_iter().reduce(f64::max).unwrap_or(0.0)
}

/// Eigenvalues of a symmetric matrix. 1×1 and 2×2 use closed forms since
/// those are evaluated thousands of times per simulated second.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    match m.nrows() {
        0 => Vec::new(),
        1 => vec![m[(0, 0)]],
        2 => {
            let (a, b, d) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
            let mean = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            vec![mean - rad, mean + rad]
        }
        _ => m.clone().symmetric_eigenvalues().iter().copied().collect(),
    }
}

/// Clamps negative eigenvalues of a symmetric matrix to zero.
pub fn psd_floor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 || lambda_min(m) >= 0.0 {
        return m.clone();
    }
    let eig = m.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> crate::Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or(crate::Error::NotPositiveDefinite(what))?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Symmetric square root factor `L` with `L Lᵀ = m` for a PSD matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals)
}

pub fn is_finite_matrix(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn is_finite_vector(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Max absolute row sum.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn from_rows(rows: &[Vec<f64>]) -> crate::Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(crate::Error::Config("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}
