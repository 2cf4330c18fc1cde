//! Small feed-forward networks with hand-written gradients.

pub mod adam;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layers::{Layer, LayerKind};
pub use model::{bce, Arch, Model, ModelSpec};
pub use tensor::Tensor;
pub use train::{predict, train, train_rows, EpochLoss, Prediction, TrainConfig, TrainedModel};
