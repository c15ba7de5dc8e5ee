//! Dense rank-4 tensors and the layers of the noise predictor, each with a
//! hand-written forward and backward pass.
//!
//! All layers are generic over [`Element`] so the same code runs in `f32`
//! for training and in `f64` for gradient checks.

mod activation;
mod adamw;
mod conv;
mod element;
pub mod gradcheck;
mod linear;
mod norm;
mod resize;
mod tensor;

pub use activation::{relu, relu_backward, sigmoid, silu, silu_backward};
pub use adamw::{AdamW, AdamWState};
pub use conv::{conv2d, conv2d_backward, Conv2dGrads, ConvSpec};
pub use element::Element;
pub use gradcheck::{grad_check, relative_error};
pub use linear::{linear, linear_backward, LinearGrads};
pub use norm::{group_norm, group_norm_backward, GroupNormCache, GroupNormGrads, GROUP_NORM_EPS};
pub use resize::{
    bilinear_resize, bilinear_resize_backward, bilinear_resize_plane, upsample_nearest2x,
    upsample_nearest2x_backward,
};
pub use tensor::{concat_channels, split_channels, Shape, Tensor};
