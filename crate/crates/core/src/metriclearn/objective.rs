//! Rank window, empirical pAUC, its hinge relaxation and the gradient pieces.
//!
//! Scores here are squared Mahalanobis distances: smaller means "more likely
//! the same speaker".

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::trials::{MiniBatch, PairLabel, PairSet};

use super::HyperParams;

/// Guards `⌈Kα⌉`, `⌊Kβ⌋` against representation error in `α`, `β`.
const ROUNDING_SLACK: f64 = 1e-9;

/// Negatives whose ascending-distance rank lies in `max(k_alpha, 1)..=k_beta`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankWindow {
    pub k_alpha: usize,
    pub k_beta: usize,
    /// Indices into the negative list, in ascending distance order (ties by
    /// index).
    pub selected: Vec<usize>,
}

impl RankWindow {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

pub fn window_bounds(k: usize, alpha: f64, beta: f64) -> (usize, usize) {
    let k_alpha = ((k as f64 * alpha) - ROUNDING_SLACK).ceil().max(0.0) as usize;
    let k_beta = ((k as f64 * beta) + ROUNDING_SLACK).floor().min(k as f64) as usize;
    (k_alpha, k_beta)
}

pub fn select_rank_window(neg_scores: &[f64], alpha: f64, beta: f64) -> Result<RankWindow> {
    let k = neg_scores.len();
    if k == 0 {
        return Err(Error::invalid("rank window needs at least one negative"));
    }
    let (k_alpha, k_beta) = window_bounds(k, alpha, beta);
    let start = k_alpha.max(1);
    if k_beta < start {
        return Err(Error::EmptyWindow { negatives: k, beta });
    }
    let key = |&a: &usize, &b: &usize| neg_scores[a].total_cmp(&neg_scores[b]).then(a.cmp(&b));
    let mut order: Vec<usize> = (0..k).collect();
    if k_beta < k {
        order.select_nth_unstable_by(k_beta - 1, key);
        order.truncate(k_beta);
    }
    order.sort_unstable_by(key);
    Ok(RankWindow {
        k_alpha,
        k_beta,
        selected: order[start - 1..].to_vec(),
    })
}

fn require_nonempty(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid("pAUC needs at least one positive and one windowed negative"));
    }
    Ok(())
}

/// Counts `(#{S⁺ > S⁻}, #{S⁺ = S⁻})` over all pairs in `O((J + R) log(J + R))`.
pub(crate) fn count_misorders(pos: &[f64], neg: &[f64]) -> (u64, u64) {
    let mut p = pos.to_vec();
    let mut n = neg.to_vec();
    p.sort_unstable_by(f64::total_cmp);
    n.sort_unstable_by(f64::total_cmp);
    let (mut lo, mut hi) = (0usize, 0usize);
    let (mut greater, mut equal) = (0u64, 0u64);
    for &s in &p {
        while lo < n.len() && n[lo] < s {
            lo += 1;
        }
        if hi < lo {
            hi = lo;
        }
        while hi < n.len() && n[hi] <= s {
            hi += 1;
        }
        greater += lo as u64;
        equal += (hi - lo) as u64;
    }
    (greater, equal)
}

/// `1 − (1/JR) Σ [𝟙(S⁺ > S⁻) + ½ 𝟙(S⁺ = S⁻)]`.
pub fn pauc_empirical(pos_scores: &[f64], neg_window: &[f64]) -> Result<f64> {
    require_nonempty(pos_scores, neg_window)?;
    let (greater, equal) = count_misorders(pos_scores, neg_window);
    let pairs = (pos_scores.len() * neg_window.len()) as f64;
    Ok(1.0 - (greater as f64 + 0.5 * equal as f64) / pairs)
}

/// `(1/JR) ΣΣ max(0, δ − S⁻ + S⁺)`.
pub fn hinge_pauc_loss(pos: &[f64], neg_window: &[f64], delta: f64) -> f64 {
    if pos.is_empty() || neg_window.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for &sp in pos {
        for &sn in neg_window {
            acc += (delta - sn + sp).max(0.0);
        }
    }
    acc / (pos.len() * neg_window.len()) as f64
}

/// `Π(j, r) = 1` iff `δ + S⁺_j > S⁻_r`.
pub fn index_matrix(pos: &[f64], neg_window: &[f64], delta: f64) -> DMatrix<u8> {
    DMatrix::from_fn(pos.len(), neg_window.len(), |j, r| u8::from(delta + pos[j] > neg_window[r]))
}

/// The weighted-margin form of the hinge loss: `c + (1/J)Σ p_j S⁺_j − (1/R)Σ p_r S⁻_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginWeights {
    pub c: f64,
    /// `p_j = (1/R) Σ_r Π(j, r)`.
    pub positive: Vec<f64>,
    /// `p_r = (1/J) Σ_j Π(j, r)`.
    pub negative: Vec<f64>,
}

impl MarginWeights {
    pub fn from_index_matrix(pi: &DMatrix<u8>, delta: f64) -> Self {
        let (j, r) = pi.shape();
        let total: u64 = pi.iter().map(|&v| v as u64).sum();
        let positive = pi.row_iter().map(|row| row.iter().map(|&v| v as f64).sum::<f64>() / r as f64).collect();
        let negative = pi.column_iter().map(|col| col.iter().map(|&v| v as f64).sum::<f64>() / j as f64).collect();
        Self {
            c: delta * total as f64 / (j * r) as f64,
            positive,
            negative,
        }
    }

    pub fn value(&self, pos: &[f64], neg_window: &[f64]) -> f64 {
        let j = pos.len() as f64;
        let r = neg_window.len() as f64;
        let a: f64 = self.positive.iter().zip(pos).map(|(p, s)| p * s).sum();
        let b: f64 = self.negative.iter().zip(neg_window).map(|(p, s)| p * s).sum();
        self.c + a / j - b / r
    }
}

/// `P` and `P_P` of the linearised objective `⟨P + γP_P, M⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub p: DMatrix<f64>,
    pub p_pos: DMatrix<f64>,
}

impl Gradients {
    pub fn combined(&self, gamma: f64) -> DMatrix<f64> {
        &self.p + &self.p_pos * gamma
    }
}

/// Direct rank-one accumulation:
/// `P_P = (1/J) Σ z⁺z⁺ᵀ`, `P = (1/JR) ΣΣ Π(j,r)(z⁺_j z⁺_jᵀ − z⁻_r z⁻_rᵀ)`.
///
/// `window.selected` indexes the negatives of `pairs` in order.
pub fn accumulate_gradients(pairs: &PairSet, window: &RankWindow, pi: &DMatrix<u8>) -> Gradients {
    let positives: Vec<&DVector<f64>> = pairs.positives().map(|p| &p.z).collect();
    let negatives: Vec<&DVector<f64>> = pairs.negatives().map(|p| &p.z).collect();
    let d = pairs.pairs.first().map_or(0, |p| p.z.len());
    let j = positives.len();
    let r = window.len();
    let mut p = DMatrix::zeros(d, d);
    let mut p_pos = DMatrix::zeros(d, d);
    for z in &positives {
        p_pos.ger(1.0 / j as f64, z, z, 1.0);
    }
    let scale = 1.0 / (j * r) as f64;
    for (jj, zp) in positives.iter().enumerate() {
        for (rr, &neg_idx) in window.selected.iter().enumerate() {
            if pi[(jj, rr)] == 1 {
                let zn = negatives[neg_idx];
                p.ger(scale, zp, zp, 1.0);
                p.ger(-scale, zn, zn, 1.0);
            }
        }
    }
    Gradients { p, p_pos }
}

pub fn mahalanobis_sq(z: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (z.transpose() * m * z)[0]
}

/// `μ [tr(M) − logdet(M)]`; infinite when `μ > 0` and `M` is not PD.
pub fn logdet_regulariser(m: &DMatrix<f64>, mu: f64) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    match crate::linalg::spd_logdet(m, "metric") {
        Ok(ld) => mu * (m.trace() - ld),
        Err(_) => f64::INFINITY,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub loss: f64,
    pub positive_term: f64,
    pub regulariser: f64,
    pub total: f64,
    /// Empirical pAUC over the same window.
    pub pauc: f64,
}

/// The regularised pAUC objective on a fixed pair set, with the rank window
/// chosen under `m` itself.
pub fn pauc_objective(pairs: &PairSet, m: &DMatrix<f64>, hyper: &HyperParams) -> Result<ObjectiveValue> {
    let pos: Vec<f64> = pairs.positives().map(|p| mahalanobis_sq(&p.z, m)).collect();
    let neg: Vec<f64> = pairs.negatives().map(|p| mahalanobis_sq(&p.z, m)).collect();
    if pos.is_empty() {
        return Err(Error::invalid("objective needs at least one positive pair"));
    }
    let window = select_rank_window(&neg, hyper.alpha, hyper.beta)?;
    let wneg: Vec<f64> = window.selected.iter().map(|&i| neg[i]).collect();
    let loss = hinge_pauc_loss(&pos, &wneg, hyper.delta);
    let positive_term = hyper.gamma * pos.iter().sum::<f64>() / pos.len() as f64;
    let regulariser = logdet_regulariser(m, hyper.mu);
    Ok(ObjectiveValue {
        loss,
        positive_term,
        regulariser,
        total: loss + positive_term + regulariser,
        pauc: pauc_empirical(&pos, &wneg)?,
    })
}

/// Mean triplet hinge `max(0, δ − S(a, n) + S(a, p))` plus the same
/// regularisers as [`pauc_objective`].
pub fn triplet_objective(batch: &MiniBatch, m: &DMatrix<f64>, hyper: &HyperParams) -> Result<ObjectiveValue> {
    let triplets = crate::trials::enumerate_triplets(batch);
    if triplets.is_empty() {
        return Err(Error::invalid("triplet objective needs at least two speakers"));
    }
    let x = |i: usize| &batch.vectors.records()[i].vector;
    let dist = |a: usize, b: usize| mahalanobis_sq(&(x(a) - x(b)), m);
    let loss = triplets
        .iter()
        .map(|t| (hyper.delta - dist(t.anchor, t.negative) + dist(t.anchor, t.positive)).max(0.0))
        .sum::<f64>()
        / triplets.len() as f64;

    let idx = batch.pair_indices();
    let pos: Vec<f64> = idx.iter().filter(|p| p.2 == PairLabel::Positive).map(|p| dist(p.0, p.1)).collect();
    let neg: Vec<f64> = idx.iter().filter(|p| p.2 == PairLabel::Negative).map(|p| dist(p.0, p.1)).collect();
    let window = select_rank_window(&neg, hyper.alpha, hyper.beta)?;
    let wneg: Vec<f64> = window.selected.iter().map(|&i| neg[i]).collect();
    let positive_term = hyper.gamma * pos.iter().sum::<f64>() / pos.len() as f64;
    let regulariser = logdet_regulariser(m, hyper.mu);
    Ok(ObjectiveValue {
        loss,
        positive_term,
        regulariser,
        total: loss + positive_term + regulariser,
        pauc: pauc_empirical(&pos, &wneg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn window_examples() {
        let w = select_rank_window(&[0.5, 0.9, 1.5, 0.1], 0.0, 0.5).unwrap();
        assert_eq!(w.selected, vec![3, 0]);
        let w = select_rank_window(&[0.5, 0.9, 1.5, 0.1], 0.0, 1.0).unwrap();
        assert_eq!(w.selected, vec![3, 0, 1, 2]);
        let scores: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let w = select_rank_window(&scores, 0.2, 0.4).unwrap();
        assert_eq!((w.k_alpha, w.k_beta), (2, 4));
        assert_eq!(w.selected, vec![1, 2, 3]);
        assert!(matches!(select_rank_window(&[1.0, 2.0], 0.0, 0.4), Err(Error::EmptyWindow { .. })));
        assert!(select_rank_window(&[], 0.0, 1.0).is_err());
    }

    #[test]
    fn window_ties_follow_input_order() {
        let w = select_rank_window(&[1.0, 0.0, 1.0, 1.0, 0.0], 0.0, 0.6).unwrap();
        assert_eq!(w.selected, vec![1, 4, 0]);
    }

    #[test]
    fn pauc_examples() {
        assert_eq!(pauc_empirical(&[0.5], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(pauc_empirical(&[1.0], &[1.0]).unwrap(), 0.5);
        assert_eq!(pauc_empirical(&[0.2, 0.8], &[0.1, 0.5]).unwrap(), 0.25);
        assert!(pauc_empirical(&[], &[1.0]).is_err());
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge_pauc_loss(&[0.5], &[2.0], 1.0), 0.0);
        assert_eq!(hinge_pauc_loss(&[1.0], &[1.5], 1.0), 0.5);
        // δ = 0: zero loss exactly when no positive exceeds a negative.
        assert_eq!(hinge_pauc_loss(&[0.2, 0.4], &[0.4, 0.9], 0.0), 0.0);
        assert!(hinge_pauc_loss(&[0.2, 0.5], &[0.4, 0.9], 0.0) > 0.0);
    }

    #[test]
    fn index_matrix_examples() {
        assert_eq!(index_matrix(&[1.0], &[1.2], 0.5)[(0, 0)], 1);
        assert_eq!(index_matrix(&[1.0], &[1.0], 0.0)[(0, 0)], 0);
    }

    #[test]
    fn single_term_gradient() {
        use crate::trials::Pair;
        let zp = DVector::from_column_slice(&[1.0, 2.0]);
        let zn = DVector::from_column_slice(&[0.5, -1.0]);
        let pairs = PairSet {
            pairs: vec![
                Pair { z: zp.clone(), label: PairLabel::Positive, src: ("a".into(), "b".into()) },
                Pair { z: zn.clone(), label: PairLabel::Negative, src: ("a".into(), "c".into()) },
            ],
            n_positive: 1,
            n_negative: 1,
        };
        let window = RankWindow { k_alpha: 0, k_beta: 1, selected: vec![0] };
        let g = accumulate_gradients(&pairs, &window, &DMatrix::from_element(1, 1, 1u8));
        assert_eq!(g.p, &zp * zp.transpose() - &zn * zn.transpose());
        let g0 = accumulate_gradients(&pairs, &window, &DMatrix::from_element(1, 1, 0u8));
        assert_eq!(g0.p, DMatrix::zeros(2, 2));
        assert_eq!(g0.p_pos, &zp * zp.transpose());
    }

    fn brute_pauc(pos: &[f64], neg: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &p in pos {
            for &n in neg {
                if p > n {
                    acc += 1.0;
                } else if p == n {
                    acc += 0.5;
                }
            }
        }
        1.0 - acc / (pos.len() * neg.len()) as f64
    }

    proptest! {
        #[test]
        fn pauc_matches_double_loop(pos in prop::collection::vec(0u8..20, 1..30), neg in prop::collection::vec(0u8..20, 1..30)) {
            let pos: Vec<f64> = pos.into_iter().map(f64::from).collect();
            let neg: Vec<f64> = neg.into_iter().map(f64::from).collect();
            prop_assert_eq!(pauc_empirical(&pos, &neg).unwrap(), brute_pauc(&pos, &neg));
        }

        #[test]
        fn pauc_invariant_to_increasing_transform(pos in prop::collection::vec(-5.0f64..5.0, 1..30), neg in prop::collection::vec(-5.0f64..5.0, 1..30)) {
            let f = |v: &f64| v.exp() * 3.0 + 1.0;
            let a = pauc_empirical(&pos, &neg).unwrap();
            let b = pauc_empirical(&pos.iter().map(f).collect::<Vec<_>>(), &neg.iter().map(f).collect::<Vec<_>>()).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn weighted_margin_decomposition(pos in prop::collection::vec(0.0f64..4.0, 1..20), neg in prop::collection::vec(0.0f64..4.0, 1..20), delta in 0.0f64..2.0) {
            let pi = index_matrix(&pos, &neg, delta);
            let weights = MarginWeights::from_index_matrix(&pi, delta);
            let lhs = hinge_pauc_loss(&pos, &neg, delta);
            prop_assert!((lhs - weights.value(&pos, &neg)).abs() < 1e-12);
        }

        #[test]
        fn window_is_smallest_band(scores in prop::collection::vec(0u8..10, 1..60), alpha in 0.0f64..0.5, width in 0.05f64..0.5) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let beta = (alpha + width).min(1.0);
            let k = scores.len();
            match select_rank_window(&scores, alpha, beta) {
                Ok(w) => {
                    let mut order: Vec<usize> = (0..k).collect();
                    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
                    let start = w.k_alpha.max(1);
                    prop_assert_eq!(&w.selected[..], &order[start - 1..w.k_beta]);
                    prop_assert_eq!(w.len(), w.k_beta - start + 1);
                }
                Err(_) => {
                    let (ka, kb) = window_bounds(k, alpha, beta);
                    prop_assert!(kb < ka.max(1));
                }
            }
        }
    }
}
