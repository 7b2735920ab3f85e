//! Differentiable building blocks with explicit forward and backward functions.
//!
//! Every layer is a plain struct of [`Param`](crate::tensor::Param)s. Forward
//! functions return what the matching backward needs; backward functions
//! return gradients rather than mutating layers, and the layer-level
//! `accumulate` helpers add them into the parameter gradient buffers.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod init;
pub mod linear;
pub mod pool;

pub use activation::{activation, activation_backward, sigmoid, Activation};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNorm, BatchNormCache, BatchNormGrads, Mode};
pub use conv::{conv3d, conv3d_backward, conv3d_forward, conv3d_grads, conv3d_reference, Conv3d, Conv3dGrads};
pub use linear::{linear_backward, linear_forward, Linear, LinearGrads};
pub use pool::{global_avg_pool, global_avg_pool_backward};
