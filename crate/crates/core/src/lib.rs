//! Speaker-verification back-end: preprocessing, Mahalanobis metric learning
//! for partial-AUC maximisation, scoring, calibration and evaluation.

pub mod embeddings;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod metriclearn;
pub mod model_file;
pub mod preprocess;
pub mod scoring;
pub mod synth;
pub mod trials;

pub use embeddings::{EmbeddingRecord, EmbeddingSet, Polarity, ScoreSet, ScoredTrial, Trial, TrialLabel, TrialList};
pub use error::{Error, ErrorClass, Result};
pub use metriclearn::{train_pauc_metric, train_triplet_metric, HyperParams, MetricKind, MetricModel};
pub use model_file::ModelFile;
pub use scoring::{score_trials, ScoringBackend};
pub use synth::SynthSpec;
