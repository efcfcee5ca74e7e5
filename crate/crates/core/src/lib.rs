//! Token-frequency coupling metrics and per-conversation drift detection.
//!
//! Each conversational turn is viewed as a loop between the accumulated
//! context `S`, the response `A` and the next prompt `S'`. Entropies of the
//! token bags and of their pooled merges give a coupling ratio `P` and its
//! decomposition into forward (`Hf`) and backward (`Hb`) uncertainty.
//! [`idt::ConversationState`] tracks those metrics turn by turn, learns a
//! baseline and flags departures from it.

pub mod error;
pub mod idt;
pub mod infometrics;
pub mod stats;
pub mod token_stats;

pub use error::IdtError;
pub use idt::{
    BaselineModel, ConversationState, DetectionReport, DetectorConfig, DeviationFlag,
    DirectionalMode, MetricBaseline, MetricDetection, Registry, TrendOutcome, TurnOutcome,
    TurnRange,
};
pub use infometrics::{compute_turn_metrics, metrics_against, Metric, TurnMetrics};
pub use stats::{CorrelationResult, Direction, StatsError, TTestResult, TTestVariant};
pub use token_stats::{
    bag_from_tokens, entropy, pooled_entropy, tokenize, EntropyAccumulator, TokenBag, TokenId,
    Tokenizer, TokenizerMode, TokenizerSpec,
};
