//! Pairwise and triplet training structures built from labeled embeddings.

use nalgebra::DVector;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embeddings::{EmbeddingRecord, EmbeddingSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairLabel {
    /// Same speaker (a "true" trial).
    Positive,
    /// Different speakers (an impostor trial).
    Negative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    /// `x_first − x_second`.
    pub z: DVector<f64>,
    pub label: PairLabel,
    pub src: (String, String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
    pub n_positive: usize,
    pub n_negative: usize,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positives(&self) -> impl Iterator<Item = &Pair> {
        self.pairs.iter().filter(|p| p.label == PairLabel::Positive)
    }

    pub fn negatives(&self) -> impl Iterator<Item = &Pair> {
        self.pairs.iter().filter(|p| p.label == PairLabel::Negative)
    }
}

/// All unordered utterance pairs, in input order, `z = first − second`.
pub fn build_pairs(set: &EmbeddingSet) -> Result<PairSet> {
    if set.len() < 2 {
        return Err(Error::invalid("building pairs needs at least two utterances"));
    }
    let recs = set.records();
    let mut pairs = Vec::with_capacity(recs.len() * (recs.len() - 1) / 2);
    let (mut n_positive, mut n_negative) = (0, 0);
    for (i, a) in recs.iter().enumerate() {
        for b in &recs[i + 1..] {
            let label = if a.speaker_id == b.speaker_id {
                n_positive += 1;
                PairLabel::Positive
            } else {
                n_negative += 1;
                PairLabel::Negative
            };
            pairs.push(Pair {
                z: &a.vector - &b.vector,
                label,
                src: (a.utt_id.clone(), b.utt_id.clone()),
            });
        }
    }
    Ok(PairSet {
        pairs,
        n_positive,
        n_negative,
    })
}

/// `s` speakers with two embeddings each. Vectors `2k` and `2k + 1` belong to
/// speaker `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub speakers: Vec<String>,
    pub vectors: EmbeddingSet,
}

impl MiniBatch {
    pub fn n_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn pairs(&self) -> PairSet {
        build_pairs(&self.vectors).expect("a minibatch holds at least two vectors")
    }

    /// Batch-local index pairs `(i, j)`, `i < j`, in the same order as
    /// [`MiniBatch::pairs`].
    pub fn pair_indices(&self) -> Vec<(usize, usize, PairLabel)> {
        let n = self.vectors.len();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                let label = if i / 2 == j / 2 {
                    PairLabel::Positive
                } else {
                    PairLabel::Negative
                };
                out.push((i, j, label));
            }
        }
        out
    }
}

/// Speakers eligible for sampling (at least two utterances), indexed once so
/// repeated sampling is cheap.
#[derive(Debug, Clone)]
pub struct BatchSampler<'a> {
    set: &'a EmbeddingSet,
    eligible: Vec<(String, Vec<usize>)>,
}

impl<'a> BatchSampler<'a> {
    pub fn new(set: &'a EmbeddingSet) -> Self {
        let eligible = set
            .by_speaker()
            .into_iter()
            .filter(|(_, idx)| idx.len() >= 2)
            .map(|(spk, idx)| (spk.to_string(), idx))
            .collect();
        Self { set, eligible }
    }

    pub fn n_eligible(&self) -> usize {
        self.eligible.len()
    }

    /// Uniformly picks `s` eligible speakers without replacement, then two
    /// distinct utterances of each.
    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> Result<MiniBatch> {
        if s == 0 || s > self.eligible.len() {
            return Err(Error::invalid(format!(
                "batch of {s} speakers requested but {} speakers have two or more utterances",
                self.eligible.len()
            )));
        }
        let mut speakers = Vec::with_capacity(s);
        let mut vectors = EmbeddingSet::new(self.set.dim());
        for k in index::sample(rng, self.eligible.len(), s) {
            let (spk, utts) = &self.eligible[k];
            speakers.push(spk.clone());
            for u in index::sample(rng, utts.len(), 2) {
                let r: &EmbeddingRecord = &self.set.records()[utts[u]];
                vectors.push(r.clone())?;
            }
        }
        Ok(MiniBatch { speakers, vectors })
    }
}

pub fn sample_minibatch(set: &EmbeddingSet, s: usize, rng_seed: u64) -> Result<MiniBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    BatchSampler::new(set).sample(s, &mut rng)
}

/// A triplet constraint over batch-local vector indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Every ordered same-speaker pair as (anchor, positive), combined with every
/// vector of another speaker: `2s(2s − 2)` triplets.
pub fn enumerate_triplets(batch: &MiniBatch) -> Vec<Triplet> {
    let n = batch.vectors.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(2));
    for anchor in 0..n {
        let positive = anchor ^ 1;
        for negative in 0..n {
            if negative / 2 != anchor / 2 {
                out.push(Triplet {
                    anchor,
                    positive,
                    negative,
                });
            }
        }
    }
    out
}

/// Index-sharing pattern between the positive and negative pair of a tetrad.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TetradClass {
    /// Negative pair contains the first vector of the positive pair.
    SharesFirst,
    /// Negative pair contains the second vector of the positive pair.
    SharesSecond,
    /// Negative pair contains another vector of the positive pair's speaker.
    SameSpeaker,
    /// Negative pair involves neither the positive pair nor its speaker.
    Disjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tetrad {
    pub pos: (usize, usize),
    pub neg: (usize, usize),
    pub class: TetradClass,
}

impl Tetrad {
    /// The triplet expressing the same constraint, for the two sharing classes.
    pub fn as_triplet(&self) -> Option<Triplet> {
        let (shared, positive) = match self.class {
            TetradClass::SharesFirst => (self.pos.0, self.pos.1),
            TetradClass::SharesSecond => (self.pos.1, self.pos.0),
            _ => return None,
        };
        let negative = if self.neg.0 == shared { self.neg.1 } else { self.neg.0 };
        Some(Triplet {
            anchor: shared,
            positive,
            negative,
        })
    }
}

/// The full cross product of positive and negative pairs, classified.
pub fn enumerate_tetrads(batch: &MiniBatch) -> Vec<Tetrad> {
    let idx = batch.pair_indices();
    let speaker = |i: usize| i / 2;
    let positives: Vec<(usize, usize)> = idx
        .iter()
        .filter(|p| p.2 == PairLabel::Positive)
        .map(|p| (p.0, p.1))
        .collect();
    let negatives: Vec<(usize, usize)> = idx
        .iter()
        .filter(|p| p.2 == PairLabel::Negative)
        .map(|p| (p.0, p.1))
        .collect();
    let mut out = Vec::with_capacity(positives.len() * negatives.len());
    for &pos in &positives {
        for &neg in &negatives {
            let has = |v: usize| neg.0 == v || neg.1 == v;
            let class = if has(pos.0) {
                TetradClass::SharesFirst
            } else if has(pos.1) {
                TetradClass::SharesSecond
            } else if speaker(neg.0) == speaker(pos.0) || speaker(neg.1) == speaker(pos.0) {
                TetradClass::SameSpeaker
            } else {
                TetradClass::Disjoint
            };
            out.push(Tetrad { pos, neg, class });
        }
    }
    out
}
