//! Error type shared across the crate.

/// Convenience alias used by every fallible operation in this crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for network construction, training, and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// A network description violates a structural rule.
    #[error("invalid network spec: {0}")]
    Spec(String),

    /// A configuration value is outside its documented range.
    #[error("invalid config: {0}")]
    Config(String),

    /// A class label does not fit the declared number of classes.
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    /// A loss or activation stopped being a finite number.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A data or checkpoint file does not match its expected layout.
    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
