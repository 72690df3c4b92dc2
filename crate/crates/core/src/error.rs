use thiserror::Error;

use crate::tensor::Shape4;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {0:?}: every dimension must be at least 1 and the element count must fit in memory")]
    InvalidShape([usize; 4]),

    #[error("{op}: shape mismatch, expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        expected: Shape4,
        found: Shape4,
    },

    #[error("data length {len} does not match shape {shape} ({} elements)", shape.numel())]
    LengthMismatch { shape: Shape4, len: usize },

    #[error("kernel size {0} is not supported: sparse complementary kernels need an odd size of at least 3")]
    InvalidKernelSize(usize),

    #[error("invalid convolution geometry: {0}")]
    InvalidGeometry(String),

    #[error("mask violation in `{name}`: nonzero weight {value} at masked position (out={out}, in={inp}, row={row}, col={col})")]
    MaskViolation {
        name: String,
        out: usize,
        inp: usize,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("layer {index} ({kind}): {msg}")]
    Layer {
        index: usize,
        kind: String,
        msg: String,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("gradient tape was already consumed by a backward pass")]
    TapeConsumed,

    #[error("non-finite values in `{0}` (training diverged)")]
    NonFinite(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("bad archive magic: expected \"SCFUSE01\"")]
    BadMagic,

    #[error("archive truncated: {0}")]
    Truncated(String),

    #[error("malformed archive: {0}")]
    Malformed(String),

    #[error("CIFAR-10 batch size {0} bytes is not a positive multiple of 3073")]
    CifarSize(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
