use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Incompatible tensor extents. The message names both shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid layer, model or operation parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// A generated quantity became non-finite inside a scan.
    #[error("numeric error at step {step}: {what}")]
    Numeric { step: usize, what: String },

    /// Gradient check produced a non-finite value.
    #[error("non-finite value while checking parameter `{0}`")]
    NonFinite(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    /// Training loss became NaN or infinite.
    #[error("training diverged at step {0}")]
    Diverged(usize),
}

#[macro_export]
#[doc(hidden)]
macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::Error::Shape(alloc::format!($($arg)*)) };
}

#[macro_export]
#[doc(hidden)]
macro_rules! config_err {
    ($($arg:tt)*) => { $crate::Error::Config(alloc::format!($($arg)*)) };
}
