use crate::embeddings::ScoreSet;
use crate::error::{Error, Result};
use crate::metriclearn::{pauc_empirical, select_rank_window};

use super::curves::{curve_from, labeled};

/// Detection cost parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self {
            p_target: 0.01,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

impl DcfParams {
    fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(Error::invalid(format!("p_target must lie in (0, 1), got {}", self.p_target)));
        }
        if !(self.c_miss > 0.0 && self.c_fa > 0.0) {
            return Err(Error::invalid("detection costs must be positive"));
        }
        Ok(())
    }

    fn normalised_cost(&self, fnr: f64, fpr: f64) -> f64 {
        let miss = self.c_miss * self.p_target;
        let fa = self.c_fa * (1.0 - self.p_target);
        (miss * fnr + fa * fpr) / miss.min(fa)
    }

    /// Bayes threshold on calibrated log-likelihood ratios.
    pub fn bayes_threshold(&self) -> f64 {
        -((self.p_target * self.c_miss) / ((1.0 - self.p_target) * self.c_fa)).ln()
    }
}

/// Normalised partial AUC over the false-positive band `[alpha, beta]`.
/// Similarity scores are negated into distances and ranked exactly as in
/// training.
pub fn pauc_metric(scores: &ScoreSet, alpha: f64, beta: f64) -> Result<f64> {
    let (tar, non) = labeled(scores)?;
    let pos: Vec<f64> = tar.iter().map(|s| -s).collect();
    let neg: Vec<f64> = non.iter().map(|s| -s).collect();
    let window = select_rank_window(&neg, alpha, beta)?;
    let wneg: Vec<f64> = window.selected.iter().map(|&i| neg[i]).collect();
    pauc_empirical(&pos, &wneg)
}

/// Wilcoxon–Mann–Whitney statistic with half credit for ties.
pub fn auc(scores: &ScoreSet) -> Result<f64> {
    let (tar, mut non) = labeled(scores)?;
    non.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &t in &tar {
        let below = non.partition_point(|&n| n < t);
        let not_above = non.partition_point(|&n| n <= t);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(wins / (tar.len() * non.len()) as f64)
}

pub fn min_dcf(scores: &ScoreSet, params: &DcfParams) -> Result<f64> {
    params.validate()?;
    let (tar, non) = labeled(scores)?;
    let curve = curve_from(&tar, &non);
    Ok(curve
        .points
        .iter()
        .map(|p| params.normalised_cost(p.fnr, p.fpr))
        .fold(f64::INFINITY, f64::min))
}

/// DCF at the Bayes threshold, accepting when `llr ≥ θ`.
pub fn act_dcf(calibrated: &ScoreSet, params: &DcfParams) -> Result<f64> {
    params.validate()?;
    let (tar, non) = labeled(calibrated)?;
    let theta = params.bayes_threshold();
    let fnr = tar.iter().filter(|&&s| s < theta).count() as f64 / tar.len() as f64;
    let fpr = non.iter().filter(|&&s| s >= theta).count() as f64 / non.len() as f64;
    Ok(params.normalised_cost(fnr, fpr))
}

/// Mean precision at each target's rank, ranking by descending score with
/// nontargets placed first within ties.
pub fn average_precision(scores: &ScoreSet) -> Result<f64> {
    let (tar, non) = scores.split_labeled()?;
    if tar.is_empty() {
        return Err(Error::invalid("average precision needs at least one target"));
    }
    let mut ranked: Vec<(f64, bool)> = tar.iter().map(|&s| (s, true)).chain(non.iter().map(|&s| (s, false))).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &(_, is_target)) in ranked.iter().enumerate() {
        if is_target {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(sum / tar.len() as f64)
}

/// `log₂(1 + eˣ)` without overflow.
pub(crate) fn softplus_bits(x: f64) -> f64 {
    if x > 0.0 {
        x * std::f64::consts::LOG2_E + (-x).exp().ln_1p() * std::f64::consts::LOG2_E
    } else if x == 0.0 {
        1.0
    } else {
        x.exp().ln_1p() * std::f64::consts::LOG2_E
    }
}

/// Cost of log-likelihood ratio in bits.
pub fn cllr(calibrated: &ScoreSet) -> Result<f64> {
    let (tar, non) = labeled(calibrated)?;
    let t = tar.iter().map(|&l| softplus_bits(-l)).sum::<f64>() / tar.len() as f64;
    let n = non.iter().map(|&l| softplus_bits(l)).sum::<f64>() / non.len() as f64;
    Ok(0.5 * (t + n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(tar: &[f64], non: &[f64]) -> ScoreSet {
        ScoreSet::from_labeled(tar, non)
    }

    /// Exhaustive sweep over thresholds at every score and `±∞`.
    fn brute_min_dcf(tar: &[f64], non: &[f64], p: &DcfParams) -> f64 {
        let mut ts: Vec<f64> = tar.iter().chain(non).copied().collect();
        ts.push(f64::INFINITY);
        ts.push(f64::NEG_INFINITY);
        ts.iter()
            .map(|&t| {
                let miss = tar.iter().filter(|&&s| s < t).count() as f64 / tar.len() as f64;
                let fa = non.iter().filter(|&&s| s >= t).count() as f64 / non.len() as f64;
                let denom = (p.c_miss * p.p_target).min(p.c_fa * (1.0 - p.p_target));
                (p.c_miss * p.p_target * miss + p.c_fa * (1.0 - p.p_target) * fa) / denom
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// AP by enumerating every tie-order of each tie group and keeping the
    /// worst value.
    fn brute_ap(tar: &[f64], non: &[f64]) -> f64 {
        let mut items: Vec<(f64, bool)> = tar.iter().map(|&s| (s, true)).chain(non.iter().map(|&s| (s, false))).collect();
        let n = items.len();
        let mut worst = f64::INFINITY;
        let mut perm: Vec<usize> = (0..n).collect();
        fn permute(k: usize, perm: &mut Vec<usize>, items: &[(f64, bool)], worst: &mut f64) {
            if k == perm.len() {
                let ordered: Vec<(f64, bool)> = perm.iter().map(|&i| items[i]).collect();
                if ordered.windows(2).all(|w| w[0].0 >= w[1].0) {
                    let mut hits = 0.0;
                    let mut sum = 0.0;
                    let mut total = 0.0;
                    for (r, it) in ordered.iter().enumerate() {
                        if it.1 {
                            hits += 1.0;
                            total += 1.0;
                            sum += hits / (r + 1) as f64;
                        }
                    }
                    *worst = worst.min(sum / total);
                }
                return;
            }
            for i in k..perm.len() {
                perm.swap(k, i);
                permute(k + 1, perm, items, worst);
                perm.swap(k, i);
            }
        }
        items.sort_by(|a, b| b.0.total_cmp(&a.0));
        permute(0, &mut perm, &items, &mut worst);
        worst
    }

    #[test]
    fn pauc_examples() {
        let s = set(&[5.0, 6.0], &[1.0, 2.0, 3.0]);
        assert_eq!(pauc_metric(&s, 0.0, 0.5).unwrap(), 1.0);
        // Distances {1, 3} vs {0.5, 2, 4, 5}, β = 0.5: window {0.5, 2}; one
        // ordered pair of four wins.
        let s = set(&[-1.0, -3.0], &[-0.5, -2.0, -4.0, -5.0]);
        assert_eq!(pauc_metric(&s, 0.0, 0.5).unwrap(), 0.25);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&set(&[3.0, 4.0], &[1.0, 2.0])).unwrap(), 1.0);
        assert_eq!(auc(&set(&[1.0], &[1.0])).unwrap(), 0.5);
        assert_eq!(auc(&set(&[2.0, 4.0], &[3.0, 1.0])).unwrap(), 0.75);
        assert!(auc(&set(&[], &[1.0])).is_err());
    }

    #[test]
    fn dcf_examples() {
        let p = DcfParams::default();
        assert_eq!(min_dcf(&set(&[3.0, 4.0], &[1.0, 2.0]), &p).unwrap(), 0.0);
        assert_eq!(min_dcf(&set(&[1.0, 1.0], &[1.0, 1.0, 1.0]), &p).unwrap(), 1.0);
        let (tar, non) = ([0.2, 1.5], [-0.3, 0.9]);
        let got = min_dcf(&set(&tar, &non), &p).unwrap();
        assert!((got - brute_min_dcf(&tar, &non, &p)).abs() < 1e-15);
        let q = DcfParams {
            p_target: 0.3,
            c_miss: 2.0,
            c_fa: 1.0,
        };
        assert!((min_dcf(&set(&tar, &non), &q).unwrap() - brute_min_dcf(&tar, &non, &q)).abs() < 1e-15);
    }

    #[test]
    fn act_dcf_hand_example() {
        let p = DcfParams::default();
        let theta = -(0.01f64 / 0.99).ln();
        assert!((p.bayes_threshold() - theta).abs() < 1e-15);
        // θ ≈ 4.595: one of two targets misses, one of two nontargets false-alarms.
        let s = set(&[5.0, 4.0], &[4.6, -1.0]);
        let expect = (0.01 * 0.5 + 0.99 * 0.5) / 0.01;
        assert!((act_dcf(&s, &p).unwrap() - expect).abs() < 1e-12);
        assert!(act_dcf(&s, &p).unwrap() >= min_dcf(&s, &p).unwrap());
        assert_eq!(act_dcf(&set(&[10.0], &[-10.0]), &p).unwrap(), 0.0);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&set(&[3.0, 2.0], &[1.0])).unwrap(), 1.0);
        assert_eq!(average_precision(&set(&[1.0], &[2.0])).unwrap(), 0.5);
        let (tar, non) = ([2.0, 1.0, 1.0], [1.0, 3.0]);
        let got = average_precision(&set(&tar, &non)).unwrap();
        assert!((got - brute_ap(&tar, &non)).abs() < 1e-15);
        assert!(average_precision(&set(&[], &[1.0])).is_err());
    }

    #[test]
    fn cllr_examples() {
        assert_eq!(cllr(&set(&[0.0, 0.0], &[0.0, 0.0, 0.0])).unwrap(), 1.0);
        let two = cllr(&set(&[1.0], &[-1.0])).unwrap();
        let expect = 2.0 * (1.0 + (-1.0f64).exp()).ln() / (2.0 * std::f64::consts::LN_2);
        assert!((two - expect).abs() < 1e-14);
        assert!((two - 0.4519).abs() < 1e-4);
        assert!(cllr(&set(&[800.0], &[-800.0])).unwrap() < 1e-300);
    }

    fn score_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((-20i32..20).prop_map(|v| v as f64 * 0.25), 1..25)
    }

    proptest! {
        #[test]
        fn pauc_full_band_is_auc(tar in score_vec(), non in score_vec()) {
            let s = set(&tar, &non);
            prop_assert!((pauc_metric(&s, 0.0, 1.0).unwrap() - auc(&s).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn rank_metrics_invariant_under_monotone_maps(tar in score_vec(), non in score_vec().prop_filter("two nontargets", |v| v.len() >= 2)) {
            let a = set(&tar, &non);
            let f = |v: f64| (0.7 * v).exp() + 2.0;
            let tar2: Vec<f64> = tar.iter().map(|&v| f(v)).collect();
            let non2: Vec<f64> = non.iter().map(|&v| f(v)).collect();
            let b = set(&tar2, &non2);
            let p = DcfParams::default();
            prop_assert_eq!(auc(&a).unwrap(), auc(&b).unwrap());
            prop_assert_eq!(pauc_metric(&a, 0.0, 0.5).unwrap(), pauc_metric(&b, 0.0, 0.5).unwrap());
            prop_assert_eq!(min_dcf(&a, &p).unwrap(), min_dcf(&b, &p).unwrap());
            prop_assert_eq!(average_precision(&a).unwrap(), average_precision(&b).unwrap());
            prop_assert_eq!(super::super::curves::eer(&a).unwrap(), super::super::curves::eer(&b).unwrap());
        }

        #[test]
        fn dcf_ordering(tar in score_vec(), non in score_vec(), pt in 0.01f64..0.99) {
            let s = set(&tar, &non);
            let p = DcfParams { p_target: pt, c_miss: 1.0, c_fa: 1.0 };
            let min = min_dcf(&s, &p).unwrap();
            prop_assert!((0.0..=1.0 + 1e-15).contains(&min));
            prop_assert!(act_dcf(&s, &p).unwrap() >= min);
            prop_assert!((min - brute_min_dcf(&tar, &non, &p)).abs() < 1e-12);
        }
    }
}
