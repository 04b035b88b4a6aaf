//! Differentiable primitives. Each forward function has a matching adjoint.

pub mod activation;
pub mod concat;
pub mod conv;
pub mod decimate;
pub mod dropout;
pub mod linear;
pub mod loss;
pub mod pool;

pub use activation::{leaky_relu, leaky_relu_backward, DEFAULT_LEAK};
pub use concat::{concat_channels, split_channels};
pub use conv::{
    conv2d_backward, conv2d_forward, conv2d_forward_instrumented, depthwise_filter,
    depthwise_filter_backward, ConvGrads, ConvParams, OpCount,
};
pub use decimate::{decimate2, decimate2_backward, Axis, Phase};
pub use dropout::{dropout, dropout_backward, DropoutMask};
pub use linear::{Linear, LinearGrads};
pub use loss::{softmax, softmax_cross_entropy};
pub use pool::{maxpool2x2, maxpool2x2_backward, PoolIndices};
