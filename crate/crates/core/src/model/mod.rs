//! Feature student, completion network, losses, training and checkpoints.

pub mod checkpoint;
pub mod completion;
pub mod config;
pub mod layers;
pub mod losses;
pub mod student;
pub mod train;

pub use checkpoint::{Checkpoint, ModelKind};
pub use completion::{CompletionNet, CompletionOut};
pub use config::{LossWeights, ModelConfig, TrainConfig};
pub use losses::{distill_loss, tsdf_loss, tsdf_masks, DistillTerms, TsdfMasks};
pub use student::{input_tensor, StudentNet, StudentOut, MODEL_EDGE};
pub use train::{masked_cosine_similarity, train_completion, train_student, EpochLog, TrainReport, TrainingSample};
