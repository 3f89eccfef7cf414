//! Embedding-head retraining on image triplets, and prototype-based
//! re-decision of failed inferences.

mod adam;
mod loss;
mod prototype;
mod train;

pub use adam::{Adam, AdamConfig};
pub use loss::{euclidean_distance, margin_ranking_loss, triplet_margin_loss, triplet_objective, LossKind, TripletLossEval};
pub use prototype::{
    classify_by_prototype, compute_prototypes, decide_by_prototype, reclassify_failures, reclassify_with, PrototypeSet,
    DEFAULT_SUPPORT_SIZE,
};
pub use train::{train_incremental, train_tfsl, TrainConfig, TrainMode, TrainedEmbeddingModel, TrainingRecord};
