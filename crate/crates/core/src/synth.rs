//! Synthetic embeddings from the two-covariance generative model
//! `h ~ N(0, Φ_b)`, `x ~ N(h, Φ_w)`, plus the matching closed-form metric.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embeddings::{EmbeddingRecord, EmbeddingSet, Trial, TrialLabel, TrialList};
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, psd_sqrt};
use crate::scoring::metric_from_covariances;

pub const DEFAULT_DIM: usize = 20;
pub const DEFAULT_TRAIN_SPEAKERS: usize = 500;
pub const DEFAULT_TRAIN_UTTS: usize = 8;
pub const DEFAULT_EVAL_SPEAKERS: usize = 200;
pub const DEFAULT_EVAL_UTTS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub dim: usize,
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub phi_b: DMatrix<f64>,
    pub phi_w: DMatrix<f64>,
    pub seed: u64,
}

/// `diag(linspace(0.5, 2.0, dim))`.
pub fn default_phi_b(dim: usize) -> DMatrix<f64> {
    let diag = DVector::from_fn(dim, |i, _| {
        if dim == 1 {
            0.5
        } else {
            0.5 + 1.5 * i as f64 / (dim - 1) as f64
        }
    });
    DMatrix::from_diagonal(&diag)
}

impl SynthSpec {
    /// `Φ_b = Φ_w = I`.
    pub fn isotropic(dim: usize, n_speakers: usize, utts_per_speaker: usize, seed: u64) -> Self {
        Self {
            dim,
            n_speakers,
            utts_per_speaker,
            phi_b: DMatrix::identity(dim, dim),
            phi_w: DMatrix::identity(dim, dim),
            seed,
        }
    }

    pub fn default_train(seed: u64) -> Self {
        Self {
            dim: DEFAULT_DIM,
            n_speakers: DEFAULT_TRAIN_SPEAKERS,
            utts_per_speaker: DEFAULT_TRAIN_UTTS,
            phi_b: default_phi_b(DEFAULT_DIM),
            phi_w: DMatrix::identity(DEFAULT_DIM, DEFAULT_DIM),
            seed,
        }
    }

    /// Evaluation speakers share the training model and seed; generate them
    /// with [`generate_range`] past the training speakers.
    pub fn default_eval(seed: u64) -> Self {
        Self {
            n_speakers: DEFAULT_EVAL_SPEAKERS,
            utts_per_speaker: DEFAULT_EVAL_UTTS,
            ..Self::default_train(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_speakers == 0 || self.utts_per_speaker == 0 {
            return Err(Error::invalid("synth dimension and counts must be at least 1"));
        }
        let d = self.dim;
        if self.phi_b.shape() != (d, d) || self.phi_w.shape() != (d, d) {
            return Err(Error::invalid("synth covariance shapes do not match dim"));
        }
        if crate::linalg::max_asymmetry(&self.phi_b) > 1e-10 || crate::linalg::max_asymmetry(&self.phi_w) > 1e-10 {
            return Err(Error::invalid("synth covariances must be symmetric"));
        }
        if min_eigenvalue(&self.phi_w) <= 0.0 {
            return Err(Error::invalid("within-speaker covariance must be positive definite"));
        }
        if min_eigenvalue(&self.phi_b) < -1e-10 {
            return Err(Error::invalid("between-speaker covariance must be positive semi-definite"));
        }
        Ok(())
    }
}

pub fn speaker_id(index: usize) -> String {
    format!("spk{index:05}")
}

pub fn utt_id(speaker: usize, utt: usize) -> String {
    format!("spk{speaker:05}-u{utt:03}")
}

/// Generates speakers `0..n_speakers`.
pub fn generate(spec: &SynthSpec) -> Result<EmbeddingSet> {
    generate_range(spec, 0)
}

/// Generates speakers `first..first + n_speakers`.
///
/// Each speaker owns a PRNG stream; the centre and every utterance start at a
/// fixed word offset inside it, so any subset of speakers or a prefix of
/// utterances regenerates identically.
pub fn generate_range(spec: &SynthSpec, first: usize) -> Result<EmbeddingSet> {
    spec.validate()?;
    let d = spec.dim;
    let root_b = psd_sqrt(&spec.phi_b);
    let root_w = psd_sqrt(&spec.phi_w);
    let mut set = EmbeddingSet::new(d);
    for spk in first..first + spec.n_speakers {
        let draw = |slot: u64| -> DVector<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(spk as u64);
            rng.set_word_pos((slot as u128) << 32);
            DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng))
        };
        let centre = &root_b * draw(0);
        for u in 0..spec.utts_per_speaker {
            let x = &centre + &root_w * draw(u as u64 + 1);
            set.push(EmbeddingRecord {
                utt_id: utt_id(spk, u),
                speaker_id: speaker_id(spk),
                vector: x,
            })?;
        }
    }
    Ok(set)
}

/// Closed-form metric `Σ₀⁻¹ − Σ₁⁻¹` with `Σ₀ = 2Φ_w` and `Σ₁ = 2Φ_b + 2Φ_w`,
/// the covariances of same- and different-speaker difference vectors.
pub fn oracle_metric(spec: &SynthSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let sigma0 = &spec.phi_w * 2.0;
    let sigma1 = (&spec.phi_b + &spec.phi_w) * 2.0;
    metric_from_covariances(&sigma0, &sigma1)
}

/// Enrollment/test split: each speaker's first utterance enrolls, the rest
/// are tests, and every enrollment is scored against every test.
pub fn eval_trials(set: &EmbeddingSet) -> TrialList {
    let groups = set.by_speaker();
    let enrolls: Vec<(usize, &str)> = groups
        .iter()
        .map(|(spk, idx)| (idx[0], *spk))
        .collect();
    let tests: Vec<(usize, &str)> = groups
        .iter()
        .flat_map(|(spk, idx)| idx[1..].iter().map(move |&i| (i, *spk)))
        .collect();
    let mut list = TrialList::default();
    for &(e, espk) in &enrolls {
        for &(t, tspk) in &tests {
            list.entries.push(Trial {
                enroll: set.records()[e].utt_id.clone(),
                test: set.records()[t].utt_id.clone(),
                label: if espk == tspk {
                    TrialLabel::Target
                } else {
                    TrialLabel::Nontarget
                },
            });
        }
    }
    list
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    /// Anisotropic small set for preprocessing tests.
    pub fn small_set(dim: usize, n_speakers: usize, utts: usize, seed: u64) -> EmbeddingSet {
        let phi_b = DMatrix::from_fn(dim, dim, |i, j| if i == j { 0.3 + i as f64 } else { 0.1 });
        let phi_w = DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 + 0.2 * (dim - i) as f64 } else { -0.05 });
        let spec = SynthSpec {
            dim,
            n_speakers,
            utts_per_speaker: utts,
            phi_b,
            phi_w,
            seed,
        };
        generate(&spec).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empirical(set: &EmbeddingSet) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = set.dim();
        let groups = set.by_speaker();
        let mut within = DMatrix::zeros(d, d);
        let mut between = DMatrix::zeros(d, d);
        let mut n = 0.0;
        for (_, idx) in &groups {
            let m = idx.iter().fold(DVector::zeros(d), |a, &i| a + &set.records()[i].vector) / idx.len() as f64;
            for &i in idx {
                let c = &set.records()[i].vector - &m;
                within += &c * c.transpose();
                n += 1.0;
            }
            between += &m * m.transpose();
        }
        let k = idx_len(&groups) as f64;
        within /= n - groups.len() as f64;
        between /= groups.len() as f64;
        // E[m mᵀ] = Φ_b + Φ_w / k for equal-size groups.
        (within.clone(), between - within / k)
    }

    fn idx_len(groups: &[(&str, Vec<usize>)]) -> usize {
        groups[0].1.len()
    }

    fn rel_fro(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn recovers_covariances_by_large_numbers() {
        let spec = SynthSpec::isotropic(4, 1000, 10, 99);
        let set = generate(&spec).unwrap();
        let (w, b) = empirical(&set);
        assert!(rel_fro(&w, &spec.phi_w) < 0.1, "{w}");
        assert!(rel_fro(&b, &spec.phi_b) < 0.1, "{b}");
    }

    #[test]
    fn reproducible_and_subset_stable() {
        let spec = SynthSpec::isotropic(3, 10, 3, 5);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let tail = generate_range(&SynthSpec { n_speakers: 4, ..spec.clone() }, 6).unwrap();
        let full = generate(&spec).unwrap();
        for r in tail.records() {
            assert_eq!(full.get(&r.utt_id).unwrap(), r);
        }
        let other = generate(&SynthSpec { seed: 6, ..spec }).unwrap();
        assert_ne!(other.records()[0].vector, full.records()[0].vector);
    }

    #[test]
    fn degenerate_covariances() {
        let mut spec = SynthSpec::isotropic(3, 400, 2, 1);
        spec.phi_b = DMatrix::zeros(3, 3);
        let set = generate(&spec).unwrap();
        let (_, b) = empirical(&set);
        assert!(b.amax() < 0.15, "{b}");

        let mut tight = SynthSpec::isotropic(3, 5, 3, 2);
        tight.phi_w = DMatrix::identity(3, 3) * 1e-12;
        let set = generate(&tight).unwrap();
        for (_, idx) in set.by_speaker() {
            let a = &set.records()[idx[0]].vector;
            let b = &set.records()[idx[1]].vector;
            assert!((a - b).amax() < 1e-4);
        }

        let mut bad = SynthSpec::isotropic(2, 1, 1, 0);
        bad.phi_w = DMatrix::zeros(2, 2);
        assert!(generate(&bad).is_err());
    }

    #[test]
    fn difference_vector_covariances() {
        let spec = SynthSpec {
            phi_b: default_phi_b(3),
            ..SynthSpec::isotropic(3, 2000, 2, 4)
        };
        let set = generate(&spec).unwrap();
        let groups = set.by_speaker();
        let mut same = DMatrix::zeros(3, 3);
        let mut diff = DMatrix::zeros(3, 3);
        let mut n_diff = 0.0;
        for (k, (_, idx)) in groups.iter().enumerate() {
            let z = &set.records()[idx[0]].vector - &set.records()[idx[1]].vector;
            same += &z * z.transpose();
            for (_, other) in groups.iter().skip(k + 1).take(50) {
                let z = &set.records()[idx[0]].vector - &set.records()[other[0]].vector;
                diff += &z * z.transpose();
                n_diff += 1.0;
            }
        }
        same /= groups.len() as f64;
        diff /= n_diff;
        assert!(rel_fro(&same, &(&spec.phi_w * 2.0)) < 0.1);
        assert!(rel_fro(&diff, &((&spec.phi_b + &spec.phi_w) * 2.0)) < 0.1);
    }

    #[test]
    fn oracle_metric_values() {
        let spec = SynthSpec::isotropic(3, 1, 1, 0);
        let m = oracle_metric(&spec).unwrap();
        assert!((m - DMatrix::identity(3, 3) * 0.25).amax() < 1e-15);
        let mut flat = spec.clone();
        flat.phi_b = DMatrix::zeros(3, 3);
        assert!(oracle_metric(&flat).unwrap().amax() < 1e-15);
    }

    #[test]
    fn trial_split_counts() {
        let set = generate(&SynthSpec::isotropic(2, 5, 4, 0)).unwrap();
        let trials = eval_trials(&set);
        assert_eq!(trials.len(), 5 * 5 * 3);
        let targets = trials.entries.iter().filter(|t| t.label == TrialLabel::Target).count();
        assert_eq!(targets, 15);
    }
}
