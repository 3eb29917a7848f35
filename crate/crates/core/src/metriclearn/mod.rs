//! Mahalanobis metric learning with a partial-AUC or triplet hinge loss.

mod model;
pub mod objective;
mod prox;
mod trainer;

pub use model::{HyperParams, IterationRecord, MetricKind, MetricModel};
pub use objective::{
    accumulate_gradients, hinge_pauc_loss, index_matrix, mahalanobis_sq, pauc_empirical, pauc_objective,
    select_rank_window, triplet_objective, window_bounds, Gradients, MarginWeights, ObjectiveValue, RankWindow,
};
pub use prox::{psd_shrink, shrink_eigenvalue, Shrunk};
pub use trainer::{train_pauc_metric, train_triplet_metric, MetricTrainer, CONVERGENCE_WINDOW};
