use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: unsupported rank for shape {shape:?}")]
    Rank { op: &'static str, shape: Vec<usize> },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("column slice {start}..{} out of range for width {width}", start + len)]
    Slice {
        start: usize,
        len: usize,
        width: usize,
    },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("NaN in gradient flowing through `{op}` (node {node})")]
    NanGradient { op: &'static str, node: usize },
    #[error("node belongs to a different graph")]
    ForeignNode,
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
