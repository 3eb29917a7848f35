//! Small dense symmetric linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Symmetric eigendecomposition with eigenvalues in descending order.
///
/// Ties keep the solver's order (stable sort). Each eigenvector is signed so
/// that its largest-magnitude component is positive, which makes results
/// reproducible across runs.
pub fn sym_eigen_desc(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(a));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(a.nrows(), n);
    for (k, &i) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(k, &col);
    }
    (values, vectors)
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(a))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Reassembles `U diag(values) Uᵀ`.
pub fn from_eigen(values: &DVector<f64>, vectors: &DMatrix<f64>) -> DMatrix<f64> {
    let mut scaled = vectors.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= values[k];
    }
    let out = scaled * vectors.transpose();
    symmetrize(&out)
}

/// Symmetric square root of a PSD matrix; negative eigenvalues are clipped.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen_desc(a);
    from_eigen(&vals.map(|v| v.max(0.0).sqrt()), &vecs)
}

pub fn cholesky_lower(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    nalgebra::Cholesky::new(symmetrize(a))
        .map(|c| c.l())
        .ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))
}

pub fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(symmetrize(a))
        .ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))?;
    Ok(symmetrize(&chol.inverse()))
}

pub fn spd_logdet(a: &DMatrix<f64>, what: &str) -> Result<f64> {
    let l = cholesky_lower(a, what)?;
    Ok(2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Solves `A w = λ B w` for symmetric `A` and SPD `B`.
///
/// Returns eigenvalues in descending order and the matrix whose rows are the
/// matching eigenvectors, normalised so that `W B Wᵀ = I` and `W A Wᵀ = diag(λ)`.
pub fn generalized_eigh(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let l = cholesky_lower(b, "generalized eigenproblem right-hand matrix")?;
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let c = symmetrize(&(&l_inv * a * l_inv.transpose()));
    let (vals, vecs) = sym_eigen_desc(&c);
    Ok((vals, vecs.transpose() * l_inv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generalized_eigh_diagonalises_both() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5]);
        let b = DMatrix::from_row_slice(3, 3, &[1.5, 0.2, 0.0, 0.2, 1.0, 0.1, 0.0, 0.1, 0.8]);
        let (vals, w) = generalized_eigh(&a, &b).unwrap();
        let wbw = &w * &b * w.transpose();
        let waw = &w * &a * w.transpose();
        assert!((wbw - DMatrix::identity(3, 3)).abs().max() < 1e-12);
        assert!((waw - DMatrix::from_diagonal(&vals)).abs().max() < 1e-12);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = psd_sqrt(&a);
        assert!((&r * &r - a).abs().max() < 1e-12);
    }
}
