//! Encoder–decoder multilayer perceptrons with analytic gradients.

mod checkpoint;
mod loss;
mod mlp;
mod params;

pub use checkpoint::{load_params, params_from_str, params_to_string, save_params};
pub use loss::{loss, loss_gradient, LossKind};
pub use mlp::{backward, forward, init_params, mean_loss, Activation, Architecture};
pub use params::{sgd_step, Layout, ModelParams, Role, Segment};
