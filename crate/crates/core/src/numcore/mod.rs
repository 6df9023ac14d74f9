//! Minimal differentiable numerics for a fixed network topology.
//!
//! Every layer exposes a forward function and a matching backward function
//! that maps an output gradient to input/parameter gradients. The kernels are
//! generic over [`Scalar`] so training can run in `f32` while verification
//! runs the same code in `f64`.

mod activation;
pub mod checkpoint;
mod conv;
mod dense;
pub(crate) mod fixtures;
pub mod gradcheck;
mod loss;
mod optim;
mod pool;
mod scalar;
mod tensor;

pub use activation::{dropout, dropout_backward, relu, relu_backward, Dropped, Mode};
pub use checkpoint::{load_container, save_container, TensorContainer};
pub use conv::{conv1d_backward, conv1d_backward_opt, conv1d_forward, ConvGrads};
pub use dense::{dense, dense_backward, DenseGrads};
pub use gradcheck::{grad_check, grad_check_subset, numeric_gradient, GradCheckReport};
pub use loss::{
    l2_normalize, l2_normalize_backward, nt_xent_loss, softmax_cross_entropy, Normalized,
    MIN_ROW_NORM,
};
pub use optim::{cosine_lr, AdamConstants, OptimizerKind, OptimizerState};
pub use pool::{global_max_pool1d, global_max_pool1d_backward, Pooled};
pub use scalar::Scalar;
pub use tensor::{DualTensor, Tensor};
