use log::warn;
use nalgebra::{DMatrix, Matrix2, Vector2};

use crate::embeddings::ScoreSet;
use crate::error::{Error, Result};
use crate::model_file::{ModelFile, PRIMARY};

use super::curves::labeled;

pub const DEFAULT_EFFECTIVE_PRIOR: f64 = 0.01;
/// Largest admissible scale; reached on (near-)separable scores.
pub const MAX_SCALE: f64 = 1e4;
const GRAD_TOL: f64 = 1e-8;
const MAX_NEWTON_ITERS: usize = 200;

/// Affine map from raw scores to log-likelihood ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationModel {
    pub scale: f64,
    pub offset: f64,
}

impl CalibrationModel {
    pub fn apply_score(&self, s: f64) -> f64 {
        self.scale * s + self.offset
    }

    pub fn apply(&self, scores: &ScoreSet) -> ScoreSet {
        let mut out = scores.clone().into_similarity();
        for e in &mut out.entries {
            e.score = self.apply_score(e.score);
        }
        out
    }

    pub fn to_model_file(&self) -> ModelFile {
        ModelFile::new("calibration", DMatrix::from_row_slice(1, 2, &[self.scale, self.offset]))
    }

    pub fn from_model_file(file: &ModelFile) -> Result<Self> {
        file.expect_kind(&["calibration"])?;
        let m = file.matrix(PRIMARY)?;
        if m.shape() != (1, 2) {
            return Err(Error::invalid("calibration model must hold one row: scale offset"));
        }
        let model = Self {
            scale: m[(0, 0)],
            offset: m[(0, 1)],
        };
        if !(model.scale > 0.0 && model.scale.is_finite() && model.offset.is_finite()) {
            return Err(Error::invalid("calibration scale must be finite and positive"));
        }
        Ok(model)
    }
}

/// Prior-weighted logistic loss of `a·s + b` with the prior log-odds folded
/// in, plus its gradient and Hessian in `(a, b)`.
struct Objective<'a> {
    tar: &'a [f64],
    non: &'a [f64],
    prior: f64,
    logit: f64,
}

impl Objective<'_> {
    fn value(&self, p: &Vector2<f64>) -> f64 {
        let sp = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
        let t: f64 = self.tar.iter().map(|&s| sp(-(p[0] * s + p[1] + self.logit))).sum();
        let n: f64 = self.non.iter().map(|&s| sp(p[0] * s + p[1] + self.logit)).sum();
        self.prior * t / self.tar.len() as f64 + (1.0 - self.prior) * n / self.non.len() as f64
    }

    fn derivatives(&self, p: &Vector2<f64>) -> (Vector2<f64>, Matrix2<f64>) {
        let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut g = Vector2::zeros();
        let mut h = Matrix2::zeros();
        let mut add = |s: f64, w: f64, target: bool| {
            let u = p[0] * s + p[1] + self.logit;
            let su = sigmoid(u);
            let d1 = if target { su - 1.0 } else { su };
            let d2 = su * (1.0 - su);
            let x = Vector2::new(s, 1.0);
            g += x * (w * d1);
            h += x * x.transpose() * (w * d2);
        };
        let wt = self.prior / self.tar.len() as f64;
        let wn = (1.0 - self.prior) / self.non.len() as f64;
        for &s in self.tar {
            add(s, wt, true);
        }
        for &s in self.non {
            add(s, wn, false);
        }
        (g, h)
    }
}

/// Linear logistic-regression calibration at `effective_prior`, solved by
/// damped Newton to gradient norm below 1e-8.
pub fn fit_calibration(scores: &ScoreSet, effective_prior: f64) -> Result<CalibrationModel> {
    if !(effective_prior > 0.0 && effective_prior < 1.0) {
        return Err(Error::invalid(format!("effective prior must lie in (0, 1), got {effective_prior}")));
    }
    let (tar, non) = labeled(scores)?;
    let min_tar = tar.iter().copied().fold(f64::INFINITY, f64::min);
    let max_tar = tar.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_non = non.iter().copied().fold(f64::INFINITY, f64::min);
    let max_non = non.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max_tar < min_non {
        return Err(Error::Numerical(
            "calibration scale would be negative: every target scores below every nontarget".into(),
        ));
    }
    if max_non < min_tar {
        warn!("scores are separable; calibration scale capped at {MAX_SCALE:e}");
        return Ok(CalibrationModel {
            scale: MAX_SCALE,
            offset: -MAX_SCALE * 0.5 * (min_tar + max_non),
        });
    }
    let obj = Objective {
        tar: &tar,
        non: &non,
        prior: effective_prior,
        logit: (effective_prior / (1.0 - effective_prior)).ln(),
    };
    let mut p = Vector2::new(0.0, 0.0);
    let mut f = obj.value(&p);
    let mut capped = false;
    for _ in 0..MAX_NEWTON_ITERS {
        let (g, h) = obj.derivatives(&p);
        if g.norm() < GRAD_TOL {
            break;
        }
        let ridge = 1e-12 * h.trace().abs().max(1e-300);
        let step = (h + Matrix2::identity() * ridge)
            .lu()
            .solve(&(-g))
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .unwrap_or(-g);
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = p + step * t;
            let fc = obj.value(&cand);
            if fc <= f + 1e-4 * t * slope {
                p = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        if p[0].abs() > MAX_SCALE {
            capped = true;
            break;
        }
    }
    if p[0] < 0.0 {
        return Err(Error::Numerical(format!(
            "calibration scale is negative ({:.3e}); target and nontarget labels look swapped",
            p[0]
        )));
    }
    if capped {
        warn!("calibration scale diverged (scores look separable); capping at {MAX_SCALE:e}");
        p[1] *= MAX_SCALE / p[0];
        p[0] = MAX_SCALE;
    }
    if p[0] == 0.0 {
        return Err(Error::Numerical("calibration scale is zero; scores carry no information".into()));
    }
    Ok(CalibrationModel {
        scale: p[0],
        offset: p[1],
    })
}
