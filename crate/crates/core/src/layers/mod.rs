//! Forward and backward rules for every layer kind.
//!
//! Each layer is available as free functions over [`Tensor`](crate::tensor::Tensor)s
//! and, for use inside a network, through the [`Layer`] enum, which pairs a
//! forward pass with the cache its backward pass needs.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
pub(crate) mod kernels;
mod layer;
mod loss;
mod pool;

use serde::{Deserialize, Serialize};

pub use activation::{activate, activation_backward, apply_activation, derivative, ActivationKind};
pub use batchnorm::{
    batch_norm_backward, batch_norm_forward, batch_norm_forward_cached, BatchNormCache,
    BatchNormGrads, BatchNormState,
};
pub use conv::{
    conv2d_backward, convolve2d, cross_correlate2d, feature_match_score, ConvGrads, ConvParams,
};
pub use dense::{dense_backward, dense_forward, DenseGrads};
pub use dropout::{dropout, dropout_backward, dropout_with_mask, DropoutConfig};
pub use layer::{Layer, LayerCache, ParamMut, ParamRef};
pub use loss::{softmax, softmax_cross_entropy, softmax_cross_entropy_backward};
pub use pool::{pool2d, pool2d_backward, PoolIndices, PoolMode};

/// Training uses batch statistics and random dropout; inference is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Training,
    Inference,
}
