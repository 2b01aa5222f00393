//! A small convolutional classifier with manual forward and backward passes.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use checkpoint::{decode_model, encode_model, load_model, save_model};
pub use layers::{conv2d_forward, softmax_cross_entropy, Layer, LayerSpec};
pub use model::{Architecture, ConvNet, Gradients, CLASS_COUNT};
pub use tensor::Tensor;
pub use train::{evaluate, metrics_csv, train, EpochMetrics, Evaluation, LabeledSet, Optimizer, TrainConfig};
