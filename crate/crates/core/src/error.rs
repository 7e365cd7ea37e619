//! Error type shared by every module in the crate.

use alloc::string::String;

/// Errors produced by dataset generation, model evaluation, pruning, and the
/// metric kernels.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    /// A configuration value violates a documented precondition.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Tensor or image dimensions do not match what the operation expects.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// A parameter, activation, or gradient name does not exist on the model.
    #[error("unknown name: {0}")]
    UnknownName(String),
    /// An operation that needs at least one element received none.
    #[error("empty input: {0}")]
    EmptyInput(String),
    /// A ground-truth mask with no foreground pixels cannot score a map.
    #[error("mask has no foreground pixels")]
    EmptyMask,
    /// Total relevance mass is zero, so mass/rank ratios are undefined.
    /// Callers record the sample as degenerate and exclude it from means.
    #[error("degenerate saliency map: total relevance is zero")]
    DegenerateRelevance,
    /// A distortion level lies outside the kind's documented range.
    #[error("distortion level {level} out of range for {kind}")]
    LevelOutOfRange { kind: &'static str, level: f32 },
    /// The distortion kind needs the sample's segmentation mask.
    #[error("distortion {0} requires a segmentation mask")]
    MaskRequired(&'static str),
    /// The requested operation is not defined for this model family.
    #[error("unsupported model family: {0}")]
    UnsupportedFamily(String),
    /// A pruning mask does not line up with the model it is applied to.
    #[error("mask/model mismatch: {0}")]
    MaskMismatch(String),
    /// Training could not make progress (empty data, non-finite loss).
    #[error("training failed: {0}")]
    Training(String),
    /// A persistence callback supplied by the host failed (e.g. disk IO).
    #[error("persist failed: {0}")]
    Persist(String),
}

pub type Result<T> = core::result::Result<T, CoreError>;
