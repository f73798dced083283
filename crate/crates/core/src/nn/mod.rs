//! Neural kernels shared by the backbone and the lateral inhibition module.

pub mod activation;
pub mod block;
pub mod conv;
pub mod norm;
pub mod resample;

pub use activation::{relu, relu_backward, relu_op};
pub use block::{conv_block, conv_block_op, BlockVars};
pub use conv::{conv2d, conv2d_backward, conv2d_op, ConvVars, ConvWeights};
pub use norm::{batch_norm, batch_norm_op, BatchNormState, BatchStats, BnVars, NormMode, NormStats};
pub use resample::{downsample_max, downsample_op, upsample_nearest, upsample_op};
