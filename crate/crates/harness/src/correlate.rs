use std::collections::BTreeMap;

use idt_core::stats::pearson;
use idt_core::{CorrelationResult, Metric, StatsError, TurnMetrics};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// Externally computed per-turn scores (embedding similarity, judge
/// ratings, ...), keyed by score name then turn index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExternalScores {
    scores: BTreeMap<String, BTreeMap<u32, f64>>,
}

impl ExternalScores {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, turn: u32, value: f64) {
        self.scores.entry(name.into()).or_default().insert(turn, value);
    }

    pub fn get(&self, name: &str, turn: u32) -> Option<f64> {
        self.scores.get(name)?.get(&turn).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.scores.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Every scored turn must exist in a conversation of `turn_count` turns.
    pub fn validate(&self, turn_count: u32) -> Result<(), HarnessError> {
        for (name, turns) in &self.scores {
            if let Some(&t) = turns.keys().find(|&&t| t == 0 || t > turn_count) {
                return Err(HarnessError::UnknownTurn {
                    score: name.clone(),
                    turn: t,
                });
            }
        }
        Ok(())
    }
}

/// Pearson correlation between `metric` and a named external score over the
/// turns where both are present.
pub fn correlate_external(
    history: &[TurnMetrics],
    scores: &ExternalScores,
    metric: Metric,
    score_name: &str,
) -> Result<CorrelationResult, HarnessError> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = history
        .iter()
        .filter_map(|m| {
            scores
                .get(score_name, m.turn_index)
                .map(|s| (metric.value(m), s))
        })
        .unzip();
    if xs.len() < 3 {
        return Err(HarnessError::InsufficientPairs {
            score: score_name.to_string(),
            got: xs.len(),
        });
    }
    pearson(&xs, &ys).map_err(|e| match e {
        StatsError::ZeroVariance => HarnessError::ZeroVariance(score_name.to_string()),
        other => HarnessError::Stats(other),
    })
}
