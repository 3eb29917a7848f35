//! Mini-batch proximal training loop shared by the pAUC and triplet losses.
//!
//! Each step linearises the hinge loss at the current `M` into a weighted sum
//! of pair outer products, takes a gradient step on
//! `⟨P + γP_P, M⟩ + μ tr(M)` and applies the spectral proximal operator of
//! `−μ logdet(M)` with `λ = ημ`.

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embeddings::EmbeddingSet;
use crate::error::{Error, Result};
use crate::trials::{BatchSampler, MiniBatch};

use super::model::{HyperParams, IterationRecord, MetricKind, MetricModel};
use super::objective::{pauc_empirical, select_rank_window};
use super::prox::psd_shrink;

/// Iterations per moving-average window of the stopping rule.
pub const CONVERGENCE_WINDOW: usize = 20;

/// Batch vectors as columns plus the pairwise squared distances under `M`,
/// via the Gram matrix `Xᵀ M X`.
struct BatchGeometry {
    x: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl BatchGeometry {
    fn new(batch: &MiniBatch, m: &DMatrix<f64>) -> Self {
        let recs = batch.vectors.records();
        let d = batch.vectors.dim();
        let mut x = DMatrix::zeros(d, recs.len());
        for (k, r) in recs.iter().enumerate() {
            x.set_column(k, &r.vector);
        }
        let gram = (m * &x).tr_mul(&x);
        Self { x, gram }
    }

    #[inline]
    fn dist(&self, i: usize, j: usize) -> f64 {
        self.gram[(i, i)] + self.gram[(j, j)] - 2.0 * self.gram[(i, j)]
    }

    /// `Σ_e w_e (x_a − x_b)(x_a − x_b)ᵀ` over weighted unordered edges,
    /// as `X (D − W) Xᵀ` with the sparse product `W X` formed edge by edge.
    fn weighted_scatter(&self, edges: &[(usize, usize, f64)]) -> DMatrix<f64> {
        let (d, n) = self.x.shape();
        let mut degree = vec![0.0; n];
        let mut wx = DMatrix::zeros(d, n);
        for &(a, b, w) in edges {
            if w == 0.0 {
                continue;
            }
            degree[a] += w;
            degree[b] += w;
            wx.column_mut(a).axpy(w, &self.x.column(b), 1.0);
            wx.column_mut(b).axpy(w, &self.x.column(a), 1.0);
        }
        self.laplacian_product(&degree, wx)
    }

    /// Dense-weight variant of [`Self::weighted_scatter`]; `w` is symmetric.
    fn dense_scatter(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let degree: Vec<f64> = w.column_iter().map(|c| c.sum()).collect();
        let wx = &self.x * w;
        self.laplacian_product(&degree, wx)
    }

    fn laplacian_product(&self, degree: &[f64], wx: DMatrix<f64>) -> DMatrix<f64> {
        let mut u = self.x.clone();
        for (k, mut col) in u.column_iter_mut().enumerate() {
            col *= degree[k];
        }
        u -= wx;
        let out = &self.x * u.transpose();
        (&out + out.transpose()) * 0.5
    }
}

struct Linearised {
    loss: f64,
    positive_term: f64,
    batch_pauc: f64,
    gradient: DMatrix<f64>,
}

/// Stateful trainer: holds `M` and its spectrum between steps so callers can
/// drive it with their own batches.
#[derive(Debug, Clone)]
pub struct MetricTrainer {
    kind: MetricKind,
    hyper: HyperParams,
    m: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    history: Vec<IterationRecord>,
}

impl MetricTrainer {
    /// Starts from `M₀ = I`.
    pub fn new(kind: MetricKind, dim: usize, hyper: HyperParams) -> Result<Self> {
        hyper.validate()?;
        if dim == 0 {
            return Err(Error::invalid("metric dimension must be positive"));
        }
        Ok(Self {
            kind,
            hyper,
            m: DMatrix::identity(dim, dim),
            eigenvalues: DVector::from_element(dim, 1.0),
            history: Vec::new(),
        })
    }

    pub fn metric(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn history(&self) -> &[IterationRecord] {
        &self.history
    }

    fn regulariser(&self) -> f64 {
        let mu = self.hyper.mu;
        if mu == 0.0 {
            return 0.0;
        }
        if self.eigenvalues.iter().any(|&v| v <= 0.0) {
            return f64::INFINITY;
        }
        mu * self.eigenvalues.iter().map(|v| v - v.ln()).sum::<f64>()
    }

    /// Loss, positive term, batch pAUC and `P + γP_P` at the current `M`.
    fn linearise(&self, batch: &MiniBatch) -> Result<Linearised> {
        if batch.vectors.dim() != self.m.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.m.nrows(),
                found: batch.vectors.dim(),
            });
        }
        let geo = BatchGeometry::new(batch, &self.m);
        let n = batch.vectors.len();
        let s = n / 2;
        let h = &self.hyper;

        let pos: Vec<f64> = (0..s).map(|k| geo.dist(2 * k, 2 * k + 1)).collect();
        let mut neg_pairs: Vec<(u32, u32)> = Vec::with_capacity(n * n / 2);
        let mut neg: Vec<f64> = Vec::with_capacity(n * n / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                if i / 2 != j / 2 {
                    neg_pairs.push((i as u32, j as u32));
                    neg.push(geo.dist(i, j));
                }
            }
        }
        let window = select_rank_window(&neg, h.alpha, h.beta)?;
        let window_dist: Vec<f64> = window.selected.iter().map(|&i| neg[i]).collect();
        let batch_pauc = pauc_empirical(&pos, &window_dist)?;
        let positive_term = h.gamma * pos.iter().sum::<f64>() / s as f64;

        let (loss, gradient) = match self.kind {
            MetricKind::Pauc => {
                let j = pos.len();
                let r = window_dist.len();
                let mut pos_count = vec![0u32; j];
                let mut neg_count = vec![0u32; r];
                let mut hinge = 0.0;
                // Π(j, r) = 1 iff δ + S⁺_j > S⁻_r; hinge terms are nonzero exactly there.
                for (jj, &sp) in pos.iter().enumerate() {
                    let threshold = h.delta + sp;
                    let mut count = 0u32;
                    let mut acc = 0.0;
                    for (cnt, &sn) in neg_count.iter_mut().zip(&window_dist) {
                        let diff = threshold - sn;
                        let on = diff > 0.0;
                        count += on as u32;
                        *cnt += on as u32;
                        acc += if on { diff } else { 0.0 };
                    }
                    pos_count[jj] = count;
                    hinge += acc;
                }
                let scale = 1.0 / (j * r) as f64;
                let mut edges = Vec::with_capacity(j + r);
                for (k, &c) in pos_count.iter().enumerate() {
                    edges.push((2 * k, 2 * k + 1, c as f64 * scale + h.gamma / j as f64));
                }
                for (&idx, &c) in window.selected.iter().zip(&neg_count) {
                    let (a, b) = neg_pairs[idx];
                    edges.push((a as usize, b as usize, -(c as f64) * scale));
                }
                (hinge * scale, geo.weighted_scatter(&edges))
            }
            MetricKind::Triplet => {
                let count = (n * (n - 2)) as f64;
                let unit = 1.0 / count;
                let mut w = DMatrix::zeros(n, n);
                let mut hinge = 0.0;
                for a in 0..n {
                    let p = a ^ 1;
                    let threshold = h.delta + geo.dist(a, p);
                    let mut violated = 0u32;
                    for other in 0..n {
                        if other / 2 == a / 2 {
                            continue;
                        }
                        let diff = threshold - geo.dist(a, other);
                        if diff > 0.0 {
                            hinge += diff;
                            violated += 1;
                            w[(a, other)] -= unit;
                            w[(other, a)] -= unit;
                        }
                    }
                    let wp = violated as f64 * unit;
                    w[(a, p)] += wp;
                    w[(p, a)] += wp;
                }
                for k in 0..s {
                    let g = h.gamma / s as f64;
                    w[(2 * k, 2 * k + 1)] += g;
                    w[(2 * k + 1, 2 * k)] += g;
                }
                (hinge * unit, geo.dense_scatter(&w))
            }
        };

        Ok(Linearised {
            loss,
            positive_term,
            batch_pauc,
            gradient,
        })
    }

    /// One proximal step on `batch`. The record holds the objective and
    /// batch pAUC at the incoming `M`.
    pub fn step(&mut self, batch: &MiniBatch) -> Result<IterationRecord> {
        let Linearised {
            loss,
            positive_term,
            batch_pauc,
            gradient,
        } = self.linearise(batch)?;
        let h = &self.hyper;
        let objective = loss + positive_term + self.regulariser();
        if !objective.is_finite() {
            return Err(Error::Numerical(format!(
                "objective became non-finite at iteration {}",
                self.history.len()
            )));
        }

        let d = self.m.nrows();
        let step = &self.m - (gradient + DMatrix::identity(d, d) * h.mu) * h.eta;
        let step = (&step + step.transpose()) * 0.5;
        let shrunk = psd_shrink(&step, h.eta * h.mu)?;
        self.m = shrunk.matrix;
        self.eigenvalues = shrunk.eigenvalues;

        let record = IterationRecord {
            objective,
            batch_pauc,
        };
        self.history.push(record);
        Ok(record)
    }

    /// True once the mean objective over the last [`CONVERGENCE_WINDOW`]
    /// iterations differs from the preceding window's mean by less than
    /// `rel_tol` (relative).
    pub fn converged(&self) -> bool {
        let w = CONVERGENCE_WINDOW;
        let n = self.history.len();
        if n < 2 * w {
            return false;
        }
        let mean = |r: &[IterationRecord]| r.iter().map(|x| x.objective).sum::<f64>() / r.len() as f64;
        let recent = mean(&self.history[n - w..]);
        let before = mean(&self.history[n - 2 * w..n - w]);
        (recent - before).abs() <= self.hyper.rel_tol * before.abs().max(f64::MIN_POSITIVE)
    }

    pub fn into_model(self) -> MetricModel {
        MetricModel {
            kind: self.kind,
            m: self.m,
            hyper: self.hyper,
            history: self.history,
        }
    }
}

fn train(kind: MetricKind, set: &EmbeddingSet, hyper: &HyperParams) -> Result<MetricModel> {
    let mut trainer = MetricTrainer::new(kind, set.dim(), hyper.clone())?;
    let sampler = BatchSampler::new(set);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    for t in 0..hyper.max_iters {
        let batch = sampler.sample(hyper.s, &mut rng)?;
        let rec = trainer.step(&batch)?;
        if t % 50 == 0 {
            debug!(
                "{} iter {t}: objective {:.6} batch pAUC {:.4}",
                kind.as_str(),
                rec.objective,
                rec.batch_pauc
            );
        }
        if trainer.converged() {
            debug!("{} converged after {} iterations", kind.as_str(), t + 1);
            break;
        }
    }
    Ok(trainer.into_model())
}

/// Learns `M` by maximising the partial AUC over `[alpha, beta]`.
pub fn train_pauc_metric(set: &EmbeddingSet, hyper: &HyperParams) -> Result<MetricModel> {
    train(MetricKind::Pauc, set, hyper)
}

/// Same pipeline as [`train_pauc_metric`] with the triplet hinge loss.
pub fn train_triplet_metric(set: &EmbeddingSet, hyper: &HyperParams) -> Result<MetricModel> {
    train(MetricKind::Triplet, set, hyper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_asymmetry, min_eigenvalue};
    use crate::metriclearn::objective::{accumulate_gradients, index_matrix, pauc_objective, triplet_objective};
    use crate::synth::tests_support::small_set;
    use crate::trials::sample_minibatch;
    use proptest::prelude::*;
    use rand::Rng;

    fn hyper(beta: f64) -> HyperParams {
        HyperParams {
            beta,
            s: 6,
            eta: 0.5,
            ..HyperParams::default()
        }
    }

    fn random_pd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.2
    }

    fn trainer_at(kind: MetricKind, m: DMatrix<f64>, h: HyperParams) -> MetricTrainer {
        let mut t = MetricTrainer::new(kind, m.nrows(), h).unwrap();
        t.eigenvalues = crate::linalg::sym_eigen_desc(&m).0;
        t.m = m;
        t
    }

    #[test]
    fn pauc_gradient_matches_rank_one_accumulation() {
        let set = small_set(4, 20, 3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..10 {
            let batch = sample_minibatch(&set, 6, trial).unwrap();
            let m = random_pd(4, &mut rng);
            let h = hyper(0.3);
            let lin = trainer_at(MetricKind::Pauc, m.clone(), h.clone()).linearise(&batch).unwrap();

            let pairs = batch.pairs();
            let pos: Vec<f64> = pairs.positives().map(|p| mahalanobis_sq(&p.z, &m)).collect();
            let neg: Vec<f64> = pairs.negatives().map(|p| mahalanobis_sq(&p.z, &m)).collect();
            let window = select_rank_window(&neg, h.alpha, h.beta).unwrap();
            let wneg: Vec<f64> = window.selected.iter().map(|&i| neg[i]).collect();
            let pi = index_matrix(&pos, &wneg, h.delta);
            let direct = accumulate_gradients(&pairs, &window, &pi).combined(h.gamma);
            assert!((&lin.gradient - &direct).amax() < 1e-10 * (1.0 + direct.amax()));

            let obj = pauc_objective(&pairs, &m, &h).unwrap();
            assert!((lin.loss - obj.loss).abs() < 1e-10);
            assert!((lin.positive_term - obj.positive_term).abs() < 1e-10);
            assert_eq!(lin.batch_pauc, obj.pauc);
        }
    }

    use super::super::objective::mahalanobis_sq;

    /// `f(M + εE) − f(M − εE) = 2ε⟨G, E⟩` while no hinge or rank changes
    /// state, since the loss is piecewise linear in `M`.
    fn directional_check(kind: MetricKind) {
        let set = small_set(3, 12, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = HyperParams { mu: 0.0, ..hyper(0.5) };
        for trial in 0..10 {
            let batch = sample_minibatch(&set, 5, trial).unwrap();
            let m = random_pd(3, &mut rng);
            let e = {
                let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
                (&a + a.transpose()) * 0.5
            };
            let lin = trainer_at(kind, m.clone(), h.clone()).linearise(&batch).unwrap();
            let f = |m: &DMatrix<f64>| match kind {
                MetricKind::Pauc => pauc_objective(&batch.pairs(), m, &h).unwrap().total,
                MetricKind::Triplet => triplet_objective(&batch, m, &h).unwrap().total,
            };
            let eps = 1e-7;
            let fd = (f(&(&m + &e * eps)) - f(&(&m - &e * eps))) / (2.0 * eps);
            let analytic = lin.gradient.dot(&e);
            assert!((fd - analytic).abs() < 1e-5 * (1.0 + analytic.abs()), "{kind:?}: {fd} vs {analytic}");
        }
    }

    #[test]
    fn pauc_gradient_matches_finite_differences() {
        directional_check(MetricKind::Pauc);
    }

    #[test]
    fn triplet_gradient_matches_finite_differences() {
        directional_check(MetricKind::Triplet);
    }

    #[test]
    fn triplet_loss_matches_direct_enumeration() {
        let set = small_set(3, 12, 3, 4);
        let h = hyper(0.5);
        for trial in 0..5 {
            let batch = sample_minibatch(&set, 4, trial).unwrap();
            let m = DMatrix::identity(3, 3) * 0.7;
            let lin = trainer_at(MetricKind::Triplet, m.clone(), h.clone()).linearise(&batch).unwrap();
            let obj = triplet_objective(&batch, &m, &h).unwrap();
            assert!((lin.loss - obj.loss).abs() < 1e-12);
            assert_eq!(lin.batch_pauc, obj.pauc);
        }
    }

    #[test]
    fn satisfied_margins_leave_metric_unchanged() {
        // Speakers far apart relative to the margin; nothing to correct.
        let mut set = EmbeddingSet::new(2);
        for k in 0..4 {
            for u in 0..2 {
                let base = [(k as f64) * 10.0, (k % 2) as f64 * 10.0];
                set.push(crate::embeddings::EmbeddingRecord {
                    utt_id: format!("s{k}-{u}"),
                    speaker_id: format!("s{k}"),
                    vector: DVector::from_row_slice(&[base[0] + u as f64 * 0.01, base[1]]),
                })
                .unwrap();
            }
        }
        let h = HyperParams {
            delta: 0.5,
            gamma: 0.0,
            mu: 0.0,
            s: 4,
            beta: 0.5,
            ..HyperParams::default()
        };
        for kind in [MetricKind::Pauc, MetricKind::Triplet] {
            let mut t = MetricTrainer::new(kind, 2, h.clone()).unwrap();
            let batch = sample_minibatch(&set, 4, 0).unwrap();
            let rec = t.step(&batch).unwrap();
            assert_eq!(rec.objective, 0.0);
            assert!((t.metric() - DMatrix::identity(2, 2)).amax() < 1e-14);
        }
    }

    #[test]
    fn metric_stays_pd_and_symmetric() {
        let set = small_set(5, 40, 4, 5);
        for kind in [MetricKind::Pauc, MetricKind::Triplet] {
            let h = HyperParams {
                s: 10,
                eta: 5.0,
                beta: 0.1,
                ..HyperParams::default()
            };
            let mut t = MetricTrainer::new(kind, 5, h).unwrap();
            let sampler = BatchSampler::new(&set);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            for _ in 0..30 {
                t.step(&sampler.sample(10, &mut rng).unwrap()).unwrap();
                assert!(min_eigenvalue(t.metric()) > 0.0);
                assert!(max_asymmetry(t.metric()) <= 1e-12);
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_stops() {
        let set = small_set(4, 30, 3, 6);
        let h = HyperParams {
            s: 8,
            max_iters: 60,
            beta: 0.2,
            eta: 1.0,
            ..HyperParams::default()
        };
        let a = train_pauc_metric(&set, &h).unwrap();
        let b = train_pauc_metric(&set, &h).unwrap();
        assert_eq!(a, b);
        assert!(a.history.len() <= 60);
        let c = train_pauc_metric(&set, &HyperParams { seed: 1, ..h.clone() }).unwrap();
        assert_ne!(a.m, c.m);

        let loose = HyperParams {
            rel_tol: 10.0,
            ..h
        };
        assert_eq!(train_triplet_metric(&set, &loose).unwrap().history.len(), 2 * CONVERGENCE_WINDOW);
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let set = small_set(3, 5, 2, 7);
        let h = HyperParams { s: 6, ..HyperParams::default() };
        assert!(train_pauc_metric(&set, &h).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn objective_is_midpoint_convex(seed in 0u64..1000, kind_pauc in any::<bool>()) {
            let set = small_set(3, 10, 3, seed);
            let batch = sample_minibatch(&set, 5, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m1, m2) = (random_pd(3, &mut rng), random_pd(3, &mut rng));
            let h = hyper(0.3);
            let f = |m: &DMatrix<f64>| if kind_pauc {
                pauc_objective(&batch.pairs(), m, &h).unwrap().total
            } else {
                triplet_objective(&batch, m, &h).unwrap().total
            };
            let mid = (&m1 + &m2) * 0.5;
            prop_assert!(f(&mid) <= 0.5 * (f(&m1) + f(&m2)) + 1e-9);
        }
    }
}
