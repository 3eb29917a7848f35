use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::linalg::{generalized_eigh, min_eigenvalue};
use crate::model_file::ModelFile;

use super::global_mean;

/// Linear projection `x ↦ projection · (x − mean)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaTransform {
    /// `out_dim × in_dim`, rows ordered by descending eigenvalue.
    pub projection: DMatrix<f64>,
    pub mean: DVector<f64>,
    /// Generalized eigenvalues (between/within ratios) of the kept rows.
    pub eigenvalues: DVector<f64>,
}

impl LdaTransform {
    pub fn in_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.projection * (x - &self.mean)
    }

    pub fn to_model_file(&self) -> ModelFile {
        ModelFile::new("lda", self.projection.clone())
            .with_vector("mean", &self.mean)
            .with_vector("eigenvalues", &self.eigenvalues)
    }

    pub fn from_model_file(file: &ModelFile) -> Result<Self> {
        file.expect_kind(&["lda"])?;
        let projection = file.matrix(crate::model_file::PRIMARY)?.clone();
        let mean = file.vector("mean")?;
        let eigenvalues = file.vector("eigenvalues")?;
        if mean.len() != projection.ncols() || eigenvalues.len() != projection.nrows() {
            return Err(Error::invalid("inconsistent lda model shapes"));
        }
        Ok(Self {
            projection,
            mean,
            eigenvalues,
        })
    }
}

pub fn fit_lda(set: &EmbeddingSet, out_dim: usize) -> Result<LdaTransform> {
    fit_lda_with(set, out_dim, true)
}

/// Fits LDA on class-mean-centred scatter. With `whiten`, the projected
/// within-class covariance is the identity; otherwise rows have unit norm.
pub fn fit_lda_with(set: &EmbeddingSet, out_dim: usize, whiten: bool) -> Result<LdaTransform> {
    let groups = set.by_speaker();
    let d = set.dim();
    if groups.len() < 2 {
        return Err(Error::invalid("LDA needs at least two speakers"));
    }
    let bound = d.min(groups.len() - 1);
    if out_dim == 0 || out_dim > bound {
        return Err(Error::invalid(format!(
            "LDA output dimension {out_dim} outside 1..={bound} (min(in_dim, n_speakers - 1))"
        )));
    }

    let mean = global_mean(set);
    let n = set.len() as f64;
    let mut s_w = DMatrix::zeros(d, d);
    let mut s_b = DMatrix::zeros(d, d);
    for (_, idx) in &groups {
        let mut class_mean = DVector::zeros(d);
        for &i in idx {
            class_mean += &set.records()[i].vector;
        }
        class_mean /= idx.len() as f64;
        for &i in idx {
            let c = &set.records()[i].vector - &class_mean;
            s_w.ger(1.0 / n, &c, &c, 1.0);
        }
        let dm = &class_mean - &mean;
        s_b.ger(idx.len() as f64 / n, &dm, &dm, 1.0);
    }

    let trace = s_w.trace();
    if trace <= 0.0 {
        return Err(Error::Numerical("within-class scatter is zero".into()));
    }
    let reg = 1e-6 * trace / d as f64;
    if min_eigenvalue(&s_w) <= reg {
        warn!("within-class scatter is (near) singular; regularising with {reg:.3e}");
    }
    for i in 0..d {
        s_w[(i, i)] += reg;
    }

    let (values, w) = generalized_eigh(&s_b, &s_w)?;
    let mut projection = w.rows(0, out_dim).into_owned();
    if !whiten {
        for mut row in projection.row_iter_mut() {
            let norm = row.norm();
            row /= norm;
        }
    }
    Ok(LdaTransform {
        projection,
        mean,
        eigenvalues: values.rows(0, out_dim).into_owned(),
    })
}

pub fn apply_lda(t: &LdaTransform, set: &EmbeddingSet) -> Result<EmbeddingSet> {
    if set.dim() != t.in_dim() {
        return Err(Error::DimensionMismatch {
            expected: t.in_dim(),
            found: set.dim(),
        });
    }
    set.map_vectors(t.out_dim(), |r| Ok(t.apply(&r.vector)))
}
