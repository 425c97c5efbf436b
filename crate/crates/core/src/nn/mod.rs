//! Minimal deterministic MLP engine.

mod adam;
mod checkpoint;
mod layers;
mod loss;
mod model;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use layers::{BatchNormLayer, DenseLayer, Layer, MaxoutLayer, Mode, Param, ReluLayer};
pub use loss::{
    discriminator_score_grads, gan_losses, generator_score_grad, sigmoid, softplus, GanLosses,
};
pub use model::MlpModel;
pub use tensor::Tensor;
