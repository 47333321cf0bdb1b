use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown class id {id} (model has {classes} classes)")]
    UnknownClass { id: usize, classes: usize },

    #[error("training loss is not finite at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Diff(#[from] diffkit::DiffError),

    #[error(transparent)]
    Core(#[from] msdf_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FlowError>;

pub(crate) fn invalid(msg: impl Into<String>) -> FlowError {
    FlowError::InvalidArgument(msg.into())
}
