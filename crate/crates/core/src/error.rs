use thiserror::Error;

/// Errors raised by the tensor engine and the model components built on it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: non-finite value in input")]
    NonFinite { op: &'static str },

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("{what} = {value} is outside 0..={max}")]
    OutOfRange {
        what: &'static str,
        value: usize,
        max: usize,
    },

    #[error(
        "image needs {patches} local patches but at most {limit} are supported \
         (the language model input length caps the grid at six patches)"
    )]
    PatchCapacity { patches: usize, limit: usize },

    #[error(
        "sequence of {len} tokens exceeds max_seq = {max_seq}; the language model input \
         length is what limits the grid to six patches"
    )]
    SequenceOverflow { len: usize, max_seq: usize },

    #[error("adapter index {id} out of range for a bank of {n_adapters}")]
    UnknownAdapter { id: usize, n_adapters: usize },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
