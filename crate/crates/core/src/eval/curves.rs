use std::fmt::Write as _;
use std::path::Path;

use crate::embeddings::{fmt_f64, ScoreSet};
use crate::error::{Error, Result};

use super::probit::probit;

/// Clamp applied to DET rates before warping.
pub const DET_CLAMP: f64 = 1e-6;

/// Operating point: accept a trial as target when `score ≥ threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub fpr: f64,
    pub fnr: f64,
}

/// Empirical ROC points in ascending threshold order. The first point
/// accepts everything and the last (threshold `+∞`) rejects everything.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSeries {
    pub points: Vec<CurvePoint>,
    pub n_target: usize,
    pub n_nontarget: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetCurve {
    pub roc: CurveSeries,
    pub probit_fpr: Vec<f64>,
    pub probit_fnr: Vec<f64>,
    /// True if any rate was clamped into `[DET_CLAMP, 1 − DET_CLAMP]`.
    pub clamped: bool,
}

/// Similarity-polarity target and nontarget scores, both nonempty.
pub(crate) fn labeled(scores: &ScoreSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let (tar, non) = scores.split_labeled()?;
    if tar.is_empty() || non.is_empty() {
        return Err(Error::invalid(format!(
            "metrics need both classes; got {} targets and {} nontargets",
            tar.len(),
            non.len()
        )));
    }
    if tar.iter().chain(&non).any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    Ok((tar, non))
}

pub(crate) fn curve_from(tar: &[f64], non: &[f64]) -> CurveSeries {
    let mut all: Vec<(f64, bool)> = tar.iter().map(|&s| (s, true)).chain(non.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nt, nn) = (tar.len() as f64, non.len() as f64);
    let mut points = Vec::new();
    let mut tar_below = 0usize;
    let mut non_below = 0usize;
    let mut i = 0;
    while i < all.len() {
        let threshold = all[i].0;
        points.push(CurvePoint {
            threshold,
            fpr: (non.len() - non_below) as f64 / nn,
            fnr: tar_below as f64 / nt,
        });
        while i < all.len() && all[i].0 == threshold {
            if all[i].1 {
                tar_below += 1;
            } else {
                non_below += 1;
            }
            i += 1;
        }
    }
    points.push(CurvePoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        fnr: 1.0,
    });
    CurveSeries {
        points,
        n_target: tar.len(),
        n_nontarget: non.len(),
    }
}

pub fn roc_curve(scores: &ScoreSet) -> Result<CurveSeries> {
    let (tar, non) = labeled(scores)?;
    Ok(curve_from(&tar, &non))
}

pub fn det_curve(scores: &ScoreSet) -> Result<DetCurve> {
    let roc = roc_curve(scores)?;
    let mut clamped = false;
    let mut warp = |r: f64| {
        let c = r.clamp(DET_CLAMP, 1.0 - DET_CLAMP);
        clamped |= c != r;
        probit(c)
    };
    let probit_fpr = roc.points.iter().map(|p| warp(p.fpr)).collect();
    let probit_fnr = roc.points.iter().map(|p| warp(p.fnr)).collect();
    Ok(DetCurve {
        roc,
        probit_fpr,
        probit_fnr,
        clamped,
    })
}

/// Rate where the ROC crosses `fpr = fnr`, interpolating linearly between
/// the bracketing vertices.
pub(crate) fn eer_from_curve(curve: &CurveSeries) -> f64 {
    let pts = &curve.points;
    for k in 0..pts.len() {
        let p = pts[k];
        if p.fnr >= p.fpr {
            if p.fnr == p.fpr || k == 0 {
                return p.fpr;
            }
            let q = pts[k - 1];
            let gap0 = q.fpr - q.fnr;
            let gap1 = p.fpr - p.fnr;
            let t = gap0 / (gap0 - gap1);
            return q.fpr + t * (p.fpr - q.fpr);
        }
    }
    unreachable!("the last point has fnr = 1 ≥ fpr = 0")
}

pub fn eer(scores: &ScoreSet) -> Result<f64> {
    Ok(eer_from_curve(&roc_curve(scores)?))
}

pub fn write_roc(curve: &CurveSeries, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("#threshold fpr fnr\n");
    for p in &curve.points {
        let _ = writeln!(out, "{} {} {}", fmt_f64(p.threshold), fmt_f64(p.fpr), fmt_f64(p.fnr));
    }
    write_text(path.as_ref(), &out)
}

pub fn write_det(det: &DetCurve, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!("#threshold fpr fnr probit_fpr probit_fnr\n#clamped {}\n", det.clamped);
    for (k, p) in det.roc.points.iter().enumerate() {
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            fmt_f64(p.threshold),
            fmt_f64(p.fpr),
            fmt_f64(p.fnr),
            fmt_f64(det.probit_fpr[k]),
            fmt_f64(det.probit_fnr[k])
        );
    }
    write_text(path.as_ref(), &out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(tar: &[f64], non: &[f64]) -> ScoreSet {
        ScoreSet::from_labeled(tar, non)
    }

    /// Rates at threshold `t` counted directly.
    fn rates_at(tar: &[f64], non: &[f64], t: f64) -> (f64, f64) {
        let fa = non.iter().filter(|&&s| s >= t).count() as f64 / non.len() as f64;
        let miss = tar.iter().filter(|&&s| s < t).count() as f64 / tar.len() as f64;
        (fa, miss)
    }

    #[test]
    fn seven_point_hand_curve() {
        let tar = [3.0, 2.0, 1.0];
        let non = [2.5, 1.5, 0.5];
        let c = roc_curve(&set(&tar, &non)).unwrap();
        let expect = [
            (0.5, 1.0, 0.0),
            (1.0, 2.0 / 3.0, 0.0),
            (1.5, 2.0 / 3.0, 1.0 / 3.0),
            (2.0, 1.0 / 3.0, 1.0 / 3.0),
            (2.5, 1.0 / 3.0, 2.0 / 3.0),
            (3.0, 0.0, 2.0 / 3.0),
            (f64::INFINITY, 0.0, 1.0),
        ];
        assert_eq!(c.points.len(), 7);
        for (p, e) in c.points.iter().zip(expect) {
            assert_eq!((p.threshold, p.fpr, p.fnr), e);
            if p.threshold.is_finite() {
                assert_eq!(rates_at(&tar, &non, p.threshold), (p.fpr, p.fnr));
            }
        }
    }

    #[test]
    fn separated_scores_touch_origin() {
        let c = roc_curve(&set(&[5.0, 6.0], &[1.0, 2.0])).unwrap();
        assert!(c.points.iter().any(|p| p.fpr == 0.0 && p.fnr == 0.0));
    }

    #[test]
    fn all_tied_scores_jump_together() {
        let c = roc_curve(&set(&[1.0, 1.0], &[1.0, 1.0, 1.0])).unwrap();
        let pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.fpr, p.fnr)).collect();
        assert_eq!(pts, vec![(1.0, 0.0), (0.0, 1.0)]);
    }

    #[test]
    fn monotone_and_endpoints() {
        let tar = [0.3, 1.2, 1.2, 2.2, -0.5];
        let non = [-1.0, 0.3, 0.4, 1.2, -2.0, 0.0];
        let c = roc_curve(&set(&tar, &non)).unwrap();
        for w in c.points.windows(2) {
            assert!(w[1].threshold > w[0].threshold);
            assert!(w[1].fpr <= w[0].fpr && w[1].fnr >= w[0].fnr);
        }
        assert_eq!((c.points[0].fpr, c.points[0].fnr), (1.0, 0.0));
        let last = c.points.last().unwrap();
        assert_eq!((last.fpr, last.fnr), (0.0, 1.0));
    }

    #[test]
    fn single_class_and_unknown_rejected() {
        assert!(roc_curve(&set(&[1.0], &[])).is_err());
        let mut s = set(&[1.0], &[0.0]);
        s.entries[0].label = crate::embeddings::TrialLabel::Unknown;
        assert!(roc_curve(&s).is_err());
    }

    #[test]
    fn eer_hand_example() {
        assert_eq!(eer(&set(&[2.0, 4.0], &[3.0, 1.0])).unwrap(), 0.5);
        assert_eq!(eer(&set(&[5.0, 6.0], &[1.0, 2.0])).unwrap(), 0.0);
    }

    #[test]
    fn eer_interpolates_between_vertices() {
        // No vertex has fpr = fnr; compare with a brute-force segment intersection.
        let tar = [0.9, 0.1, 0.75, 0.6];
        let non = [0.2, 0.8, 0.05];
        let c = roc_curve(&set(&tar, &non)).unwrap();
        let mut best = None;
        for w in c.points.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (g0, g1) = (a.fpr - a.fnr, b.fpr - b.fnr);
            if g0 > 0.0 && g1 <= 0.0 {
                let t = g0 / (g0 - g1);
                best = Some(a.fpr + t * (b.fpr - a.fpr));
                break;
            }
        }
        let e = eer(&set(&tar, &non)).unwrap();
        assert!((e - best.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn det_warps_and_clamps() {
        let d = det_curve(&set(&[1.0, 3.0], &[2.0, 0.0])).unwrap();
        assert!(d.clamped);
        let k = d.roc.points.iter().position(|p| p.fpr == 0.5 && p.fnr == 0.5).unwrap();
        assert_eq!((d.probit_fpr[k], d.probit_fnr[k]), (0.0, 0.0));
        assert!((d.probit_fpr[0] - probit(1.0 - DET_CLAMP)).abs() < 1e-15);
    }

    #[test]
    fn det_is_affine_invariant() {
        let tar = [0.3, 1.2, 2.2, -0.5];
        let non = [-1.0, 0.3, 0.4, -2.0];
        let a = det_curve(&set(&tar, &non)).unwrap();
        let tar2: Vec<f64> = tar.iter().map(|s| 3.0 * s + 1.0).collect();
        let non2: Vec<f64> = non.iter().map(|s| 3.0 * s + 1.0).collect();
        let b = det_curve(&set(&tar2, &non2)).unwrap();
        assert_eq!(a.probit_fpr, b.probit_fpr);
        assert_eq!(a.probit_fnr, b.probit_fnr);
    }
}
