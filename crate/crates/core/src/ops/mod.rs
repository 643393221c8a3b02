//! Forward kernels for the operators used by the pose network, plus the
//! backward kernels the graph calls during reverse-mode differentiation.

mod conv;
mod dense;
mod gemm;
mod norm;
mod pool;

pub use conv::conv2d;
pub use dense::{concat_channels, l2_norm, l2_norm_grad, linear, slice_channels, NORM_STABILIZER};
pub use norm::{lrn, relu, LrnParams};
pub use pool::{avgpool2d, maxpool2d, maxpool2d_padded};

pub(crate) use conv::conv2d_backward;
pub(crate) use dense::linear_backward;
pub(crate) use norm::{lrn_backward, relu_backward};
pub(crate) use pool::{avgpool2d_backward, maxpool2d_backward, PoolGeometry};
