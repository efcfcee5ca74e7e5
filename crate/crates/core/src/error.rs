use thiserror::Error;

use crate::stats::StatsError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdtError {
    #[error("text supplied but tokenizer is in pretokenized mode")]
    TextInPretokenizedMode,
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("conversation {0:?} already exists")]
    DuplicateConversation(String),
    #[error("unknown conversation {0:?}")]
    UnknownConversation(String),
    #[error("turn {got} delivered out of order (expected {expected})")]
    OutOfOrderTurn { expected: u32, got: u32 },
    #[error("window {start}..={end} is not covered by {available} recorded turns")]
    WindowNotCovered { start: u32, end: u32, available: u32 },
    #[error("turn {0} is not in the history")]
    MissingTurn(u32),
    #[error("phase detection needs at least 2 injection turns, got {0}")]
    TooFewInjections(usize),
    #[error("trend window of {got} turns is shorter than the minimum {min}")]
    InsufficientWindow { got: usize, min: usize },
    #[error("no baseline has been learned")]
    NoBaseline,
    #[error(transparent)]
    Stats(#[from] StatsError),
}
