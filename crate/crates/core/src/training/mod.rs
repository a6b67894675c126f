//! Loss assembly, the joint training loop and inference.

pub mod config;
pub mod losses;
pub mod model;
pub mod trainer;

pub use config::{ModelConfig, TrainingConfig};
pub use losses::{huber, huber_part_loss, reconstruction_loss, regression_loss, total_loss, LossComponents, LossWeights};
pub use model::{Batch, FeatureStats, GestureModel, ModelDims, ModelHeader, Normalization, PreparedSet, TrainedModel};
pub use trainer::{set_pair_accuracy, set_regression_loss, train, EpochRecord, TrainOutcome, TrainRequest};
