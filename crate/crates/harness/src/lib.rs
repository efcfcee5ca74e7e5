//! Synthetic perturbation experiments for the conversation monitor.
//!
//! [`generator`] produces seeded token-level conversations with optional
//! injected disruptions, [`experiment`] replays them through the monitor and
//! aggregates phase-detection outcomes, [`correlate`] relates metric series
//! to externally supplied scores, and [`tables`] renders summaries.

pub mod correlate;
pub mod experiment;
pub mod generator;
pub mod tables;

use idt_core::{IdtError, StatsError};
use thiserror::Error;

pub use correlate::{correlate_external, ExternalScores};
pub use experiment::{
    replay, run_experiment, ExperimentConfig, ExperimentSummary, MetricCounts, RecoveryStats,
    RunRecord,
};
pub use generator::{
    generate_conversation, GeneratorConfig, LengthRange, PerturbationKind, PerturbationPlan,
    SyntheticConversation, SyntheticTurn, DEFAULT_INJECTION_TURNS,
};
pub use tables::{summarize_table, SummaryTables, Table, REFERENCE_NOTE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("injection turn {turn} outside 1..={n_turns}")]
    PlanOutOfRange { turn: u32, n_turns: u32 },
    #[error("score {score:?} refers to turn {turn}, which is not in the conversation")]
    UnknownTurn { score: String, turn: u32 },
    #[error("score {score:?} has only {got} turns paired with metrics (need 3)")]
    InsufficientPairs { score: String, got: usize },
    #[error("zero variance in the paired series for {0:?}")]
    ZeroVariance(String),
    #[error(transparent)]
    Monitor(#[from] IdtError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}
