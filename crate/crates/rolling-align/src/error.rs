//! Error type shared across the pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A value is too close to zero (or negative) for a reciprocal or
    /// normalization to be meaningful.
    #[error("degenerate value: {0}")]
    DegenerateValue(String),

    /// No snippet of any requested dilation fits into the video.
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    /// The objective or its gradient became non-finite during optimization.
    #[error("non-finite objective at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    /// The least-squares design matrix is rank deficient.
    #[error("singular fit: {0}")]
    SingularFit(String),

    /// A metric was requested over an empty set of valid pixels.
    #[error("empty mask: {0}")]
    EmptyMask(String),

    /// A synthetic scene or corruption specification is inconsistent.
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    /// A denoiser hook returned mismatched shapes or non-finite values.
    #[error("hook failure: {0}")]
    HookFailure(String),

    /// Tensor shapes do not agree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// On-disk data does not match its manifest or schedule.
    #[error("protocol mismatch: {0}")]
    ProtocolMismatch(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
