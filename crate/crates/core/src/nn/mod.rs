//! Small dense-network engine: forward/backward, Adam, losses and a
//! finite-difference gradient oracle. Everything is `f64`.

mod adam;
mod gradcheck;
mod loss;
mod net;

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use gradcheck::{bce_loss, ce_loss, grad_check, grad_check_input, relative_error, squared_loss, Batch, LossFn};
pub use loss::{sigmoid_bce, softmax_ce, softmax_with_temperature, BceOutput, CeOutput};
pub(crate) use loss::{sigmoid_bce_sum, softmax_ce_sum};
pub use net::{sigmoid, Activation, ActivationTrace, Dense, DenseNet, Gradients, LayerGrad, LEAKY_SLOPE};
