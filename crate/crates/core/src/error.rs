use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(alloc::vec::Vec<usize>),

    #[error("batchnorm `{0}` evaluated in inference mode without accumulated statistics")]
    MissingStatistics(String),

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("matrix is not symmetric positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("conditional covariance is singular: the conditioning set fully determines the target")]
    SingularConditional,

    #[error("could not rasterize a valid shape after {0} attempts")]
    DegenerateShape(u32),

    #[error("training diverged at step {step}: loss is {value}")]
    Diverged { step: u64, value: f64 },

    #[error("malformed checkpoint at byte {offset}: {detail}")]
    Checkpoint { offset: usize, detail: String },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }
}
