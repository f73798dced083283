//! Differentiable kernels for the lateral inhibition module (LIM): dense
//! bidirectional feature-pyramid propagation and four-direction boundary
//! activation, on top of a small batch-major tensor type and a reverse-mode tape.

pub mod autograd;
pub mod boundary;
pub mod error;
pub mod gradcheck;
pub mod lim;
pub mod nn;
pub mod params;
pub mod pyramid;
pub mod tensor;

pub use autograd::{Backward, Gradients, Tape, Var};
pub use boundary::{BaFusion, ScanDirection};
pub use error::{Error, Result};
pub use lim::{Ablation, LimConfig};
pub use params::{Binding, ParamId, ParamKind, ParamStore};
pub use pyramid::{FeaturePyramid, LimParams};
pub use tensor::{InitScheme, Real, Shape4, Tensor4};
