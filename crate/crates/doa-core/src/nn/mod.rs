//! From-scratch micro-CNN: tensors, layer ops with backprop, the model
//! stack, and Adam training.

pub mod model;
pub mod ops;
pub mod tensor;
pub mod train;

pub use model::{forward_layers, predict_layers, ArchConfig, ForwardCache, Layer, Model};
pub use ops::{
    argmax_rows, conv2d_backward, conv2d_forward, dense_backward, dense_forward,
    maxpool2d_backward, maxpool2d_forward, relu_backward, relu_forward, softmax,
    softmax_cross_entropy,
};
pub use tensor::{Scalar, Tensor};
pub use train::{
    adam_step, evaluate_accuracy, evaluate_accuracy_f32, predict, train, train_on_tensors,
    AdamState, EpochMetrics, TrainConfig, TrainOutcome,
};
