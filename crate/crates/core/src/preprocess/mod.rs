//! Feature preprocessing: mean subtraction, LDA, length normalisation and
//! simplified-PLDA latent extraction.

mod lda;
mod plda;

pub use lda::{apply_lda, fit_lda, fit_lda_with, LdaTransform};
pub use plda::{fit_plda, plda_latent, plda_llr_score, PldaModel, DEFAULT_PLDA_ITERS};

use nalgebra::DVector;

use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};

/// Scales every vector to unit Euclidean norm.
pub fn length_normalize(set: &EmbeddingSet) -> Result<EmbeddingSet> {
    set.map_vectors(set.dim(), |r| {
        let norm = r.vector.norm();
        if norm == 0.0 {
            return Err(Error::ZeroVector(r.utt_id.clone()));
        }
        Ok(&r.vector / norm)
    })
}

pub fn global_mean(set: &EmbeddingSet) -> DVector<f64> {
    let mut mean = DVector::zeros(set.dim());
    for r in set.records() {
        mean += &r.vector;
    }
    if !set.is_empty() {
        mean /= set.len() as f64;
    }
    mean
}

/// Subtracts `mean` from every vector.
pub fn subtract_mean(set: &EmbeddingSet, mean: &DVector<f64>) -> Result<EmbeddingSet> {
    if mean.len() != set.dim() {
        return Err(Error::DimensionMismatch {
            expected: set.dim(),
            found: mean.len(),
        });
    }
    set.map_vectors(set.dim(), |r| Ok(&r.vector - mean))
}
