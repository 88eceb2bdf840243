use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Spine and hip vectors do not span a frame.
    #[error("degenerate root frame (collinear or zero-length spine/hip geometry)")]
    DegenerateFrame,
    #[error("zero-length bone at joint {joint}")]
    ZeroBone { joint: usize },
    #[error("invalid topology: {0}")]
    InvalidTopology(&'static str),
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("backward pass requested without a recorded forward pass")]
    TapeMissing,
    #[error("sequence of length {len} is too short (need at least {min})")]
    DegenerateLength { len: usize, min: usize },
    #[error("label sequences differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty label sequence")]
    EmptySequence,
    #[error("numerical blow-up at step {step}")]
    NumericalBlowup { step: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { context, expected, found })
    }
}
