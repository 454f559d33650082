//! Numerical substrate: rank-4 tensors and hand-derived forward/backward
//! passes for the layers the autoencoder is built from.

mod adam;
mod conv;
mod norm;
mod resize;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::{
    conv2d, conv2d_grad, conv_geometry, transposed_conv2d, transposed_conv2d_grad, ConvKernel, Padding,
};
pub use norm::{layer_norm, layer_norm_grad, LayerNorm, LAYER_NORM_EPS};
pub use resize::{resize_nearest, resize_nearest_grad};
pub use tensor::{relu, relu_grad, sigmoid, Tensor4};
