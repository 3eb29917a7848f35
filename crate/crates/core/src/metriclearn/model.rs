use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model_file::{ModelFile, PRIMARY};

/// Training hyperparameters shared by both trainers.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Lower end of the false-positive-rate band, in `[0, 1)`.
    pub alpha: f64,
    /// Upper end of the band, in `(0, 1]`.
    pub beta: f64,
    /// Hinge margin.
    pub delta: f64,
    /// Weight of the mean positive-pair distance.
    pub gamma: f64,
    /// Weight of `tr(M) − logdet(M)`.
    pub mu: f64,
    /// Step size.
    pub eta: f64,
    /// Speakers per mini-batch.
    pub s: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.01,
            delta: 1.5,
            gamma: 0.5,
            mu: 1e-3,
            eta: 10.0,
            s: 500,
            max_iters: 1000,
            rel_tol: 1e-4,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(format!("invalid hyperparameter: {what}")));
        if !(0.0..1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1)");
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) || self.alpha >= self.beta {
            return bad("beta must lie in (alpha, 1]");
        }
        if !(self.delta >= 0.0 && self.gamma >= 0.0 && self.mu >= 0.0) {
            return bad("delta, gamma and mu must be nonnegative");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if self.s < 2 {
            return bad("batch size s must be at least 2");
        }
        if self.rel_tol.is_nan() || self.rel_tol < 0.0 {
            return bad("rel_tol must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Pauc,
    Triplet,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Pauc => "paucmetric",
            MetricKind::Triplet => "tripletmetric",
        }
    }
}

/// One training iteration: objective at the incoming `M` and batch pAUC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub objective: f64,
    pub batch_pauc: f64,
}

/// A learned squared-Mahalanobis metric `(x₁ − x₂)ᵀ M (x₁ − x₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricModel {
    pub kind: MetricKind,
    pub m: DMatrix<f64>,
    pub hyper: HyperParams,
    pub history: Vec<IterationRecord>,
}

impl MetricModel {
    /// `M = I`, the Euclidean baseline.
    pub fn identity(dim: usize) -> Self {
        Self::from_matrix(DMatrix::identity(dim, dim))
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Self {
        Self {
            kind: MetricKind::Pauc,
            m,
            hyper: HyperParams::default(),
            history: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn final_train_pauc(&self) -> Option<f64> {
        self.history.last().map(|r| r.batch_pauc)
    }

    pub fn to_model_file(&self) -> ModelFile {
        let h = &self.hyper;
        let mut f = ModelFile::new(self.kind.as_str(), self.m.clone())
            .with_f64("alpha", h.alpha)
            .with_f64("beta", h.beta)
            .with_f64("delta", h.delta)
            .with_f64("gamma", h.gamma)
            .with_f64("mu", h.mu)
            .with_f64("eta", h.eta)
            .with_param("s", h.s)
            .with_param("max_iters", h.max_iters)
            .with_f64("rel_tol", h.rel_tol)
            .with_param("seed", h.seed)
            .with_param("iterations", self.history.len());
        if let Some(p) = self.final_train_pauc() {
            f = f.with_f64("train_pauc", p);
        }
        f
    }

    pub fn from_model_file(file: &ModelFile) -> Result<Self> {
        file.expect_kind(&["paucmetric", "tripletmetric"])?;
        let kind = if file.kind == "paucmetric" {
            MetricKind::Pauc
        } else {
            MetricKind::Triplet
        };
        let m = file.matrix(PRIMARY)?.clone();
        if !m.is_square() {
            return Err(Error::invalid("metric matrix must be square"));
        }
        let d = HyperParams::default();
        let hyper = HyperParams {
            alpha: param_or(file, "alpha", d.alpha)?,
            beta: param_or(file, "beta", d.beta)?,
            delta: param_or(file, "delta", d.delta)?,
            gamma: param_or(file, "gamma", d.gamma)?,
            mu: param_or(file, "mu", d.mu)?,
            eta: param_or(file, "eta", d.eta)?,
            s: param_or(file, "s", d.s)?,
            max_iters: param_or(file, "max_iters", d.max_iters)?,
            rel_tol: param_or(file, "rel_tol", d.rel_tol)?,
            seed: param_or(file, "seed", d.seed)?,
        };
        Ok(Self {
            kind,
            m,
            hyper,
            history: Vec::new(),
        })
    }
}

/// Missing params fall back to `default`; malformed ones are errors.
fn param_or<T: std::str::FromStr>(file: &ModelFile, name: &str, default: T) -> Result<T> {
    match file.param(name) {
        Some(_) => file.param_as(name),
        None => Ok(default),
    }
}
