//! A small convolutional classifier with hand-written backpropagation.

pub mod adam;
pub mod checkpoint;
pub mod network;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use network::{default_spec, ForwardCache, LayerParams, LayerSpec, Mode, Network, Shape};
pub use tensor::Tensor;
pub use train::{predict_all, train, EpochStats, TrainConfig, TrainingSet};
