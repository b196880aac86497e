use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("drag set holds {len} drags but capacity is {capacity}")]
    Capacity { len: usize, capacity: usize },
    #[error("frame index {index} outside 0..={last}")]
    Index { index: usize, last: usize },
    #[error("invalid kinematic tree: {0}")]
    InvalidTree(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("part {part} has no visible surface point after {attempts} attempts")]
    Occluded { part: usize, attempts: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate features: {0}")]
    DegenerateFeatures(String),
}

#[macro_export]
#[doc(hidden)]
macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidInput(alloc::format!($($arg)*))
    };
}
