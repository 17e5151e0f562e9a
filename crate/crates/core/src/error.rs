use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("arithmetic overflow while computing {0}")]
    Overflow(&'static str),

    #[error("division by zero")]
    DivisionByZero,

    #[error("cannot parse {what} from {input:?}")]
    Parse { what: &'static str, input: String },

    #[error("message {message} has {actual} bits, expected {expected}")]
    MessageLength {
        message: usize,
        expected: usize,
        actual: usize,
    },

    #[error("expected {expected} messages, got {actual}")]
    MessageCount { expected: usize, actual: usize },

    #[error("illegal query at database {db}: message {message} subset {subset:?} is not stored there")]
    IllegalQuery {
        db: usize,
        message: usize,
        subset: Vec<usize>,
    },

    #[error("illegal query at database {db}: position {position} out of range for sub-message of {sub_size} bits")]
    PositionOutOfRange {
        db: usize,
        position: usize,
        sub_size: usize,
    },

    #[error("answers misaligned with plan: {0}")]
    MisalignedAnswers(String),

    #[error("decode reference (db {db}, element {index}) is out of range")]
    DecodeReference { db: usize, index: usize },

    #[error("permutations do not match parameters: {0}")]
    BadPermutations(String),

    #[error("internal count mismatch: {0}")]
    CountMismatch(String),

    #[error("storage accounting mismatch: counted {counted} bits, closed form {closed_form} bits")]
    StorageMismatch { counted: u64, closed_form: u64 },

    #[error("decoded message differs from the stored message")]
    DecodeMismatch,

    #[error("exhaustive enumeration needs {required} joint permutations, bound is {bound}")]
    EnumerationBound { required: String, bound: u128 },
}

pub type Result<T> = std::result::Result<T, Error>;
