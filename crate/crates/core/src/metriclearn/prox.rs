use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{from_eigen, max_asymmetry, sym_eigen_desc};

/// `φ⁺_λ(v) = (√(v² + 4λ) + v) / 2`, evaluated without cancellation for v < 0.
pub fn shrink_eigenvalue(v: f64, lambda: f64) -> f64 {
    let root = (v * v + 4.0 * lambda).sqrt();
    if v >= 0.0 {
        0.5 * (root + v)
    } else if lambda == 0.0 {
        0.0
    } else {
        2.0 * lambda / (root - v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shrunk {
    pub matrix: DMatrix<f64>,
    /// Eigenvalues of `matrix`, descending.
    pub eigenvalues: DVector<f64>,
}

/// Spectral proximal step: applies [`shrink_eigenvalue`] to each eigenvalue of
/// a symmetric matrix. The result is PD for `λ > 0` and PSD for `λ = 0`.
pub fn psd_shrink(x: &DMatrix<f64>, lambda: f64) -> Result<Shrunk> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::invalid(format!("shrinkage λ must be finite and ≥ 0, got {lambda}")));
    }
    if !x.is_square() {
        return Err(Error::invalid("psd_shrink needs a square matrix"));
    }
    let asym = max_asymmetry(x);
    if asym > 1e-8 {
        return Err(Error::invalid(format!("psd_shrink input is not symmetric (asymmetry {asym:.3e})")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in proximal step input".into()));
    }
    let (vals, vecs) = sym_eigen_desc(x);
    let shrunk = vals.map(|v| shrink_eigenvalue(v, lambda));
    Ok(Shrunk {
        matrix: from_eigen(&shrunk, &vecs),
        eigenvalues: shrunk,
    })
}
