use alloc::string::String;

use crate::numerics::NumericsError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("empty sentence")]
    EmptySentence,
    #[error("token id {0} is outside the vocabulary")]
    UnknownTokenId(usize),
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("sentence does not match the grammar: {0}")]
    OutOfGrammar(String),
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("requested {requested} scenes but only {available} distinct scenes exist")]
    TooManyScenes { requested: usize, available: usize },
    #[error("k = {k} exceeds corpus size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("list lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite loss {0}")]
    NonFiniteLoss(&'static str),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
