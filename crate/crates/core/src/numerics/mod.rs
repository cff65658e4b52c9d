//! Dense tensor kernels in NCHW layout.
//!
//! Every kernel is a pure function of its inputs. Reductions accumulate in
//! `f64` in a fixed order, so results do not depend on thread count.

mod activation;
mod conv;
mod norm;
mod reduce;
mod resize;
mod tensor;

pub use activation::{gelu, leaky_relu, relu, sigmoid, softplus, tanh, LEAKY_SLOPE};
pub use conv::{conv2d, depthwise_conv2d, global_avg_pool, linear, min_pool2d};
pub(crate) use conv::{conv2d_f64, linear_f64};
pub use norm::{batch_norm, layer_norm};
pub use reduce::{nearest_rank_index, quantile, softmax_lastdim};
pub use resize::{bilinear_resize, resize_sequence};
pub use tensor::Tensor;
