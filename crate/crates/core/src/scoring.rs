//! Trial scoring. Every [`ScoreSet`] produced here is in similarity polarity:
//! Mahalanobis distances are negated on the way out.

use nalgebra::{DMatrix, DVector};

use crate::embeddings::{EmbeddingSet, Polarity, ScoreSet, ScoredTrial, TrialList};
use crate::error::{Error, Result};
use crate::linalg::spd_inverse;
use crate::metriclearn::MetricModel;
use crate::preprocess::{plda_llr_score, PldaModel};

#[derive(Debug, Clone)]
pub enum ScoringBackend {
    Mahalanobis(MetricModel),
    Cosine,
    Plda(PldaModel),
}

impl ScoringBackend {
    /// Native polarity of [`ScoringBackend::score_pair`].
    pub fn polarity(&self) -> Polarity {
        match self {
            ScoringBackend::Mahalanobis(_) => Polarity::Distance,
            ScoringBackend::Cosine | ScoringBackend::Plda(_) => Polarity::Similarity,
        }
    }

    pub fn score_pair(&self, x1: &DVector<f64>, x2: &DVector<f64>) -> Result<f64> {
        match self {
            ScoringBackend::Mahalanobis(m) => mahalanobis_score(m, x1, x2),
            ScoringBackend::Cosine => cosine_score(x1, x2),
            ScoringBackend::Plda(p) => plda_llr_score(p, x1, x2),
        }
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: a, found: b })
    }
}

/// `(x₁ − x₂)ᵀ M (x₁ − x₂)`.
pub fn mahalanobis_score(model: &MetricModel, x1: &DVector<f64>, x2: &DVector<f64>) -> Result<f64> {
    check_dims(model.dim(), x1.len())?;
    check_dims(model.dim(), x2.len())?;
    let z = x1 - x2;
    Ok(z.dot(&(&model.m * &z)))
}

pub fn cosine_score(x1: &DVector<f64>, x2: &DVector<f64>) -> Result<f64> {
    check_dims(x1.len(), x2.len())?;
    let (n1, n2) = (x1.norm(), x2.norm());
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::ZeroVector("cosine scoring of a zero vector".into()));
    }
    Ok(x1.dot(x2) / (n1 * n2))
}

/// `Σ₀⁻¹ − Σ₁⁻¹`, returned as-is (possibly indefinite).
pub fn metric_from_covariances(sigma0: &DMatrix<f64>, sigma1: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if sigma0.shape() != sigma1.shape() {
        return Err(Error::DimensionMismatch {
            expected: sigma0.nrows(),
            found: sigma1.nrows(),
        });
    }
    let m = spd_inverse(sigma0, "sigma0")? - spd_inverse(sigma1, "sigma1")?;
    Ok((&m + m.transpose()) * 0.5)
}

pub fn score_trials(backend: &ScoringBackend, embeddings: &EmbeddingSet, trials: &TrialList) -> Result<ScoreSet> {
    let lookup = |id: &str| {
        embeddings
            .get(id)
            .map(|r| &r.vector)
            .ok_or_else(|| Error::MissingUtterance(id.to_string()))
    };
    let sign = match backend.polarity() {
        Polarity::Distance => -1.0,
        Polarity::Similarity => 1.0,
    };
    let mut out = ScoreSet::new(Polarity::Similarity);
    out.entries.reserve(trials.len());
    for t in &trials.entries {
        let score = backend.score_pair(lookup(&t.enroll)?, lookup(&t.test)?)?;
        out.entries.push(ScoredTrial {
            enroll: t.enroll.clone(),
            test: t.test.clone(),
            score: sign * score,
            label: t.label,
        });
    }
    Ok(out)
}
