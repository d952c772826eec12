//! Small neural-network toolkit: layers with hand-written backward passes,
//! the MLP and mesh CNN used for classification, and a mini-batch trainer.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod train;

pub use layers::{Init, Layer};
pub use model::{argmax_rows, CnnConfig, MlpConfig, ModelConfig, Network};
pub use ops::{
    conv2d_valid, dense_forward, dropout, maxpool, relu, softmax, softmax_cross_entropy,
    softmax_cross_entropy_grad,
};
pub use tensor::Tensor;
pub use train::{train, train_observed, OptimizerKind, TrainConfig, TrainedModel};
