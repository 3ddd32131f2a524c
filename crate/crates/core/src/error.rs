use crate::model::KernelKind;

/// Errors raised by the model, sampler, metric and pipeline layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("value {value} is outside the support of the {kind:?} kernel")]
    Support { kind: KernelKind, value: f64 },

    #[error("invalid moments: second moment {m2} is below the squared mean of {m1}")]
    Moments { m1: f64, m2: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("variance decomposition is undefined: every sample mean is infinite")]
    UndefinedDecomposition,

    #[error("unknown example `{0}`")]
    UnknownExample(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
