//! Simplified PLDA: speaker centre `h ~ N(0, Φ_b)`, observation
//! `x ~ N(h, Φ_w)`, trained by EM and diagonalised by the generalized
//! eigenproblem `Φ_b w = ψ Φ_w w`.

use std::f64::consts::PI;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg::{from_eigen, generalized_eigh, sym_eigen_desc, symmetrize};
use crate::model_file::{ModelFile, PRIMARY};

use super::global_mean;

pub const DEFAULT_PLDA_ITERS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    pub mean: DVector<f64>,
    /// Between-speaker covariance (PSD).
    pub phi_b: DMatrix<f64>,
    /// Within-speaker covariance (PD).
    pub phi_w: DMatrix<f64>,
    /// Rows are generalized eigenvectors: `W Φ_b Wᵀ = diag(ψ)`, `W Φ_w Wᵀ = I`.
    pub w: DMatrix<f64>,
    /// Descending, nonnegative.
    pub psi: DVector<f64>,
    /// Set when Φ_b is not identifiable (no speaker has two utterances).
    pub degenerate: bool,
    /// Marginal log-likelihood before each EM update plus after the last one.
    pub log_likelihood: Vec<f64>,
}

impl PldaModel {
    pub fn from_covariances(
        mean: DVector<f64>,
        phi_b: DMatrix<f64>,
        phi_w: DMatrix<f64>,
    ) -> Result<Self> {
        let d = mean.len();
        if phi_b.shape() != (d, d) || phi_w.shape() != (d, d) {
            return Err(Error::invalid("PLDA covariance shapes do not match the mean"));
        }
        let (psi, w) = generalized_eigh(&phi_b, &phi_w)?;
        Ok(Self {
            mean,
            phi_b,
            phi_w,
            w,
            psi: psi.map(|v| v.max(0.0)),
            degenerate: false,
            log_likelihood: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Latent coordinates before length scaling, `W (x − mean)`.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.w * (x - &self.mean)
    }

    pub fn to_model_file(&self) -> ModelFile {
        ModelFile::new("plda", self.w.clone())
            .with_matrix("phi_b", self.phi_b.clone())
            .with_matrix("phi_w", self.phi_w.clone())
            .with_vector("psi", &self.psi)
            .with_vector("mean", &self.mean)
            .with_param("degenerate", self.degenerate)
    }

    pub fn from_model_file(file: &ModelFile) -> Result<Self> {
        file.expect_kind(&["plda"])?;
        let mean = file.vector("mean")?;
        let d = mean.len();
        let w = file.matrix(PRIMARY)?.clone();
        let phi_b = file.matrix("phi_b")?.clone();
        let phi_w = file.matrix("phi_w")?.clone();
        let psi = file.vector("psi")?;
        if w.shape() != (d, d) || phi_b.shape() != (d, d) || phi_w.shape() != (d, d) || psi.len() != d {
            return Err(Error::invalid("inconsistent plda model shapes"));
        }
        Ok(Self {
            mean,
            phi_b,
            phi_w,
            w,
            psi,
            degenerate: file.param_as("degenerate").unwrap_or(false),
            log_likelihood: Vec::new(),
        })
    }
}

struct SpeakerStats {
    count: usize,
    sum: DVector<f64>,
}

/// Per-speaker sums in the current diagonalised coordinates.
fn marginal_log_likelihood(
    stats: &[SpeakerStats],
    scatter: &DMatrix<f64>,
    n_total: usize,
    w: &DMatrix<f64>,
    psi: &DVector<f64>,
    logdet_phi_w: f64,
) -> f64 {
    let d = psi.len();
    let t = w * scatter * w.transpose();
    let mut ll = -0.5 * (n_total * d) as f64 * (2.0 * PI).ln() - 0.5 * n_total as f64 * logdet_phi_w
        - 0.5 * t.trace();
    for s in stats {
        let n = s.count as f64;
        let u = w * &s.sum;
        for k in 0..d {
            let denom = 1.0 + n * psi[k];
            ll += -0.5 * denom.ln() + 0.5 * psi[k] * u[k] * u[k] / denom;
        }
    }
    ll
}

fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    let (vals, vecs) = sym_eigen_desc(m);
    let floored = vals.iter().any(|&v| v < floor);
    (from_eigen(&vals.map(|v| v.max(floor)), &vecs), floored)
}

/// Fits the simplified PLDA model by EM after global mean subtraction.
///
/// Initialisation: `Φ_b = Φ_w = ½ · total covariance`.
pub fn fit_plda(set: &EmbeddingSet, n_iters: usize) -> Result<PldaModel> {
    let groups = set.by_speaker();
    if groups.len() < 2 {
        return Err(Error::invalid("PLDA needs at least two speakers"));
    }
    let d = set.dim();
    let n_total = set.len();
    let mean = global_mean(set);

    let mut scatter = DMatrix::zeros(d, d);
    let mut stats = Vec::with_capacity(groups.len());
    for (_, idx) in &groups {
        let mut sum = DVector::zeros(d);
        for &i in idx {
            let c = &set.records()[i].vector - &mean;
            scatter.ger(1.0, &c, &c, 1.0);
            sum += c;
        }
        stats.push(SpeakerStats { count: idx.len(), sum });
    }

    let degenerate = groups.iter().all(|(_, idx)| idx.len() < 2);
    if degenerate {
        warn!("no speaker has two utterances; between-speaker covariance is not identifiable");
    }

    let total_cov = &scatter / n_total as f64;
    let floor = 1e-8 * total_cov.trace().max(f64::MIN_POSITIVE) / d as f64;
    let (mut phi_w, floored) = floor_eigenvalues(&(&total_cov * 0.5), floor);
    if floored {
        warn!("initial within-speaker covariance floored at {floor:.3e}");
    }
    let mut phi_b = &total_cov * 0.5;

    let mut history = Vec::with_capacity(n_iters + 1);
    for iter in 0..=n_iters {
        let (psi, w) = generalized_eigh(&phi_b, &phi_w)?;
        let psi = psi.map(|v| v.max(0.0));
        let logdet_phi_w = crate::linalg::spd_logdet(&phi_w, "within-speaker covariance")?;
        let ll = marginal_log_likelihood(&stats, &scatter, n_total, &w, &psi, logdet_phi_w);
        if !ll.is_finite() {
            return Err(Error::Numerical("PLDA log-likelihood is not finite".into()));
        }
        history.push(ll);
        if iter == n_iters {
            break;
        }

        // E-step and M-step in diagonalised coordinates, mapped back with W⁻¹.
        let mut acc_b = DMatrix::<f64>::zeros(d, d);
        let mut acc_w = &w * &scatter * w.transpose();
        for s in &stats {
            let n = s.count as f64;
            let u = &w * &s.sum;
            let post_var = psi.map(|p| p / (1.0 + n * p));
            let post_mean = post_var.component_mul(&u);
            let second = DMatrix::from_diagonal(&post_var) + &post_mean * post_mean.transpose();
            acc_b += &second;
            acc_w -= &u * post_mean.transpose() + &post_mean * u.transpose();
            acc_w += second * n;
        }
        let w_inv = w
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("PLDA diagonalising transform is singular".into()))?;
        let new_b = symmetrize(&(&w_inv * (acc_b / stats.len() as f64) * w_inv.transpose()));
        let new_w = symmetrize(&(&w_inv * (acc_w / n_total as f64) * w_inv.transpose()));

        let (b_clipped, _) = floor_eigenvalues(&new_b, 0.0);
        phi_b = b_clipped;
        let (w_floored, floored) = floor_eigenvalues(&new_w, floor);
        if floored {
            warn!("within-speaker covariance floored at {floor:.3e} (iteration {iter})");
        }
        phi_w = w_floored;
    }

    let mut model = PldaModel::from_covariances(mean, phi_b, phi_w)?;
    model.degenerate = degenerate;
    model.log_likelihood = history;
    Ok(model)
}

/// Extracts length-scaled latent vectors:
/// `u = W (x − mean)`, then `u ← u · sqrt(d / uᵀ(Ψ + I)⁻¹u)`.
pub fn plda_latent(model: &PldaModel, set: &EmbeddingSet) -> Result<EmbeddingSet> {
    let d = model.dim();
    if set.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: set.dim(),
        });
    }
    set.map_vectors(d, |r| {
        let u = model.project(&r.vector);
        let q: f64 = u
            .iter()
            .zip(model.psi.iter())
            .map(|(v, p)| v * v / (p + 1.0))
            .sum();
        if q == 0.0 {
            return Err(Error::ZeroVector(r.utt_id.clone()));
        }
        Ok(u * (d as f64 / q).sqrt())
    })
}

/// Same-speaker versus different-speaker log-likelihood ratio, evaluated per
/// dimension in the diagonalised space.
pub fn plda_llr_score(model: &PldaModel, enroll: &DVector<f64>, test: &DVector<f64>) -> Result<f64> {
    let d = model.dim();
    for v in [enroll, test] {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
    }
    let a = model.project(enroll);
    let b = model.project(test);
    let mut llr = 0.0;
    for k in 0..d {
        let p = model.psi[k];
        let (x, y) = (a[k], b[k]);
        let sq = x * x + y * y;
        let same_quad = ((p + 1.0) * sq - 2.0 * p * x * y) / (2.0 * p + 1.0);
        llr += -0.5 * (2.0 * p + 1.0).ln() + (p + 1.0).ln() - 0.5 * same_quad + 0.5 * sq / (p + 1.0);
    }
    Ok(llr)
}
