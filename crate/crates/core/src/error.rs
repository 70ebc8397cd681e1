use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A quantity fell outside the domain where an operation is defined,
    /// e.g. a Fisher-Rao inner product at a point on the simplex boundary.
    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    #[error("step left the positive orthant: coordinate {index} = {value:e}")]
    OrthantExit { index: usize, value: f64 },

    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: usize },

    #[error("non-finite gradient, optimiser step rejected")]
    NonFiniteGradient,

    #[error("training aborted at step {step}: {source}")]
    TrainingAborted {
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("sample {index}: {source}")]
    Sampling {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures caused by floating-point trouble rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NumericalDomain(_)
            | Error::OrthantExit { .. }
            | Error::NonFinite { .. }
            | Error::NonFiniteGradient => true,
            Error::TrainingAborted { source, .. } | Error::Sampling { source, .. } => {
                source.is_numerical()
            }
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
