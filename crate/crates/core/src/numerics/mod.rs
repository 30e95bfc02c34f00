//! Dense-array math layer shared by every other module.

pub mod array;
pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod rng;

pub use array::{DenseArray, Real};
pub use ops::{
    dw_conv1d, dw_conv1d_backward, layer_norm, layer_norm_backward, sigmoid, silu,
    silu_backward, softplus, LayerNorm, LayerNormCache, Linear, LAYER_NORM_EPS,
};
pub use params::ParamTree;
pub use rng::Rng;
