use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("label {label} at index {index} is outside [0, {num_classes})")]
    LabelOutOfRange {
        index: usize,
        label: i64,
        num_classes: usize,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("distribution row {row} of {table} sums to {sum}")]
    RowSum { table: &'static str, row: usize, sum: f64 },

    #[error("value {value} out of range for variable {variable} with support {size}")]
    ValueOutOfRange {
        variable: &'static str,
        value: usize,
        size: usize,
    },

    #[error("conditioning event {0} has probability zero")]
    ZeroProbability(String),

    #[error("no confident examples selected (keep ratio {keep_ratio}, batch {batch})")]
    EmptyConfidentSet { keep_ratio: f64, batch: usize },

    #[error("training diverged at epoch {epoch}: {what} is not finite")]
    Divergence { epoch: usize, what: &'static str },

    #[error("checkpoint does not match model: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
