//! Siamese ranking branch: a shared-weight MLP scoring multi-scale object
//! features, trained from scratch with a pairwise hinge loss.

pub mod loss;
pub mod model;
pub mod train;

pub use loss::{hinge_loss, hinge_loss_with, pair_gradient, HingeVariant};
pub use model::{branch_dims, Dense, Gradient, Mlp, Scalar, DEFAULT_HIDDEN};
pub use train::{
    mean_loss, pairwise_accuracy, train, train_indexed, EpochStats, IndexedPair, TrainConfig,
    TrainOutcome,
};

/// Production precision.
pub type RankerModel = Mlp<f32>;
