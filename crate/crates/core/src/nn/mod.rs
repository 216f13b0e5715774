//! The learned operator: a message-passing source term fused with MLS
//! features, trained by backpropagating through the integrator.

pub mod adamw;
pub mod checkpoint;
pub mod gradcheck;
pub mod mlp;
pub mod model;
pub mod objective;
pub mod train;

pub use adamw::AdamW;
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use gradcheck::{check_window_gradient, GradCheck};
pub use mlp::{Dense, Mlp};
pub use model::{Geometry, ModelConfig, ModelParams, Network, Normalization};
pub use objective::{rollout_model, window_loss_grad, ModelRhs, RebuildPolicy};
pub use train::{init_model, train, train_with, EpochRecord, TrainConfig, TrainOutcome};
