//! Small dense helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

/// Extreme eigenvalues of a symmetric matrix.
pub(crate) fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Rejects `m` unless `λ_min ≥ rel_tol · λ_max` and `λ_max > 0`.
pub(crate) fn check_pd(m: &DMatrix<f64>, rel_tol: f64, what: &str) -> Result<()> {
    let (min, max) = eigen_range(m);
    if !(max > 0.0) || !(min >= rel_tol * max) || !min.is_finite() {
        return Err(Error::NotPositiveDefinite {
            what: what.to_string(),
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }
    Ok(())
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub(crate) fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Inverse of a general square matrix via LU with a relative pivot check.
pub(crate) fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let scale = m.amax();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Singular(what.to_string()));
    }
    let lu = m.clone().lu();
    let u = lu.u();
    let min_pivot = u.diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    if min_pivot <= 1e-13 * scale {
        return Err(Error::Singular(what.to_string()));
    }
    lu.try_inverse().ok_or_else(|| Error::Singular(what.to_string()))
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub(crate) fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient { what: what.to_string() })?;
    Ok(chol.solve(b))
}

/// Symmetric square root inverse `(M)^{-1/2}` of a positive definite matrix.
pub(crate) fn inv_sqrt_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return None;
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Some(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Symmetric positive definite square root factor (`F F' = M`).
pub(crate) fn sqrt_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < 0.0) {
        return None;
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Some(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Induced matrix 1-norm (maximum absolute column sum).
pub(crate) fn norm_l1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Spectral norm of a symmetric matrix.
pub(crate) fn norm_l2_sym(m: &DMatrix<f64>) -> f64 {
    let (min, max) = eigen_range(m);
    min.abs().max(max.abs())
}
