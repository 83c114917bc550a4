//! Differentiable primitives. Each op is a pure forward/backward pair plus a
//! [`Layer`](crate::layer::Layer) wrapper that caches inputs for training.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod depthwise;
pub mod gemm;
pub mod linear;
pub mod loss;
pub mod pool;

pub use activation::{relu_backward, relu_forward, Gate, Relu};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNorm2d, BnCache, BnGrads};
pub use conv::{conv2d_backward, conv2d_forward, output_extent, Conv2d, ConvGrads};
pub use depthwise::{
    depthwise_conv2d_backward, depthwise_conv2d_forward, DepthwiseConv2d, DepthwiseGrads,
};
pub use linear::{fc_backward, fc_forward, Flatten, Linear, LinearGrads};
pub use loss::{softmax, softmax_cross_entropy};
pub use pool::{avgpool_backward, avgpool_forward, AvgPool2d};
