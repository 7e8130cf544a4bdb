use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(&'static str),
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("input is empty: {0}")]
    EmptyInput(&'static str),
    #[error("id `{0}` is used both as an item and as an entity")]
    KindConflict(String),
    #[error("invalid split: {0}")]
    Split(String),
    #[error("user {0} has no training interactions")]
    ColdUser(u32),
    #[error("{kind} index {index} out of range")]
    OutOfRange { kind: &'static str, index: u32 },
    #[error("empty candidate set")]
    EmptyCandidates,
    #[error("ground-truth set is empty")]
    EmptyTruth,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid configuration `{key}`: {message}")]
    Config { key: String, message: String },
}
