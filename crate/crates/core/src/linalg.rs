use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / norm
}

pub(crate) fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(sym.clone()).eigenvalues.min()
}

/// Rebuilds `sym` with every eigenvalue raised to at least `floor`.
pub(crate) fn clip_eigenvalues(sym: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return sym.clone();
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&clipped) * v.transpose()))
}

/// Symmetric square root `S = V Λ^{1/2} Vᵀ` of a PSD matrix, so that `S Sᵀ = P`.
pub(crate) fn symmetric_sqrt(p: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(p));
    let scale = p.norm().max(f64::MIN_POSITIVE);
    let min = eig.eigenvalues.min();
    if min < -1e-10 * scale {
        return Err(Error::NotPsd { name, min_eigenvalue: min });
    }
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&root) * v.transpose())
}

pub(crate) fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub(crate) fn vec_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}
