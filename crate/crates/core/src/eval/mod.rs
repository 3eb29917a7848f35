//! Verification metrics, curves and score calibration. Every function here
//! consumes scores in similarity polarity; distance-polarity sets are negated
//! on ingestion.

mod calibration;
mod curves;
mod metrics;
mod probit;

use std::fmt;

pub use calibration::{fit_calibration, CalibrationModel, DEFAULT_EFFECTIVE_PRIOR, MAX_SCALE};
pub use curves::{det_curve, eer, roc_curve, write_det, write_roc, CurvePoint, CurveSeries, DetCurve, DET_CLAMP};
pub use metrics::{act_dcf, auc, average_precision, cllr, min_dcf, pauc_metric, DcfParams};
pub use probit::probit;

use crate::embeddings::ScoreSet;
use crate::error::{Error, Result};
use log::warn;

/// Band used for the fixed `pauc_0_001` entry of the report.
pub const REPORT_PAUC_BAND: (f64, f64) = (0.0, 0.01);

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub dcf: DcfParams,
    /// Band for the `pauc_custom` entry.
    pub alpha: f64,
    pub beta: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            dcf: DcfParams::default(),
            alpha: 0.0,
            beta: 0.1,
        }
    }
}

/// All eight scalar metrics. `act_dcf` and `cllr` read the scores as
/// log-likelihood ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub eer: f64,
    pub min_dcf: f64,
    pub pauc_0_001: f64,
    pub pauc_custom: f64,
    pub auc: f64,
    pub ap: f64,
    pub act_dcf: f64,
    pub cllr: f64,
}

impl MetricsReport {
    pub fn entries(&self) -> [(&'static str, f64); 8] {
        [
            ("eer", self.eer),
            ("min_dcf", self.min_dcf),
            ("pauc_0_001", self.pauc_0_001),
            ("pauc_custom", self.pauc_custom),
            ("auc", self.auc),
            ("ap", self.ap),
            ("act_dcf", self.act_dcf),
            ("cllr", self.cllr),
        ]
    }
}

/// One `key=value` line per metric.
impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// pAUC, or NaN with a warning when the band holds no nontarget.
fn pauc_or_nan(scores: &ScoreSet, alpha: f64, beta: f64) -> Result<f64> {
    match pauc_metric(scores, alpha, beta) {
        Err(Error::EmptyWindow { negatives, beta }) => {
            warn!("pAUC band up to {beta} is empty with {negatives} nontargets; reporting NaN");
            Ok(f64::NAN)
        }
        other => other,
    }
}

/// Computes every metric; a pAUC band too narrow for the nontarget count is
/// reported as NaN rather than failing the whole report.
pub fn evaluate(scores: &ScoreSet, options: &EvalOptions) -> Result<MetricsReport> {
    let (lo, hi) = REPORT_PAUC_BAND;
    Ok(MetricsReport {
        eer: eer(scores)?,
        min_dcf: min_dcf(scores, &options.dcf)?,
        pauc_0_001: pauc_or_nan(scores, lo, hi)?,
        pauc_custom: pauc_or_nan(scores, options.alpha, options.beta)?,
        auc: auc(scores)?,
        ap: average_precision(scores)?,
        act_dcf: act_dcf(scores, &options.dcf)?,
        cllr: cllr(scores)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_lists_every_key() {
        let s = ScoreSet::from_labeled(&[2.0, 0.5], &[-1.0, 1.0, -3.0]);
        let r = evaluate(&s, &EvalOptions::default()).unwrap();
        let text = r.to_string();
        for key in ["eer", "min_dcf", "pauc_0_001", "pauc_custom", "auc", "ap", "act_dcf", "cllr"] {
            assert!(text.lines().any(|l| l.starts_with(&format!("{key}="))), "{key}");
        }
        assert_eq!(r.auc, auc(&s).unwrap());
        assert!(r.pauc_0_001.is_nan());
        assert!(text.contains("pauc_0_001=NaN"));
    }
}
