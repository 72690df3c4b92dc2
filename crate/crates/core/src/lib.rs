//! Sparse complementary convolution (scFusion) on the CPU.
//!
//! Pairs of checkerboard-masked kernels are convolved in parallel, combined
//! by addition and negation, and fused channel-wise by a 1×1 convolution.
//! The crate covers the masks, a direct NCHW convolution engine that skips
//! masked taps and counts its MACs, a cost analyzer, a small tape-based
//! autodiff engine with SGD, model specs, and weight archives.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod autodiff;
pub mod bench;
pub mod complexity;
pub mod conv;
pub mod error;
pub mod fusion;
pub mod io;
pub mod model;
pub mod sc_kernels;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use complexity::{model_cost, ratio_grid, LayerCostReport, ModelCostReport};
pub use conv::{conv1x1, conv2d_dense, conv2d_sparse, ConvGeometry, MacCounter};
pub use error::{Error, Result};
pub use fusion::{Ablation, Alpha, FusionMode, KernelKind, SCFusionConfig, SCFusionLayer};
pub use io::WeightArchive;
pub use model::{LayerSpec, Model, ModelSpec};
pub use sc_kernels::{make_mask_pair, MaskGrid, MaskId, SCKernelPair, SCMaskPair};
pub use scalar::Scalar;
pub use tensor::{Shape4, Tensor4};

pub type Tensor = Tensor4<f32>;
pub type Tensor64 = Tensor4<f64>;
pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;
pub type FusionLayer32 = SCFusionLayer<f32>;
pub type FusionLayer64 = SCFusionLayer<f64>;
