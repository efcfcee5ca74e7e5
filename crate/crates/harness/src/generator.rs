//! Seeded synthetic conversations.
//!
//! Each message is sampled token by token from a mixture: with probability
//! `coupling` a token is copied uniformly from the most recent context
//! window (so messages echo what was just said), otherwise it is drawn
//! uniformly from the topic vocabulary. Perturbations replace the next
//! prompt at scheduled turns with a fixed-length message whose vocabulary
//! departs from the running conversation.
//!
//! Vocabulary layout for `vocab_size = V`, `topic_size = T`, `marker_count = M`:
//!
//! ```text
//! [0, T)        topic vocabulary
//! [T, 2T)       shifted topic (topic-shift injections)
//! [V − M, V)    marker tokens (contradiction injections)
//! ```

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use idt_core::TokenId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::HarnessError;

pub const DEFAULT_INJECTION_TURNS: [u32; 5] = [31, 46, 61, 76, 91];

/// Inclusive token-count range for generated messages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub vocab_size: u32,
    pub topic_size: u32,
    /// Probability of copying a token from the recent context.
    pub coupling: f64,
    pub turn_length: LengthRange,
    /// Number of most recent context tokens the copy step draws from.
    pub context_window: usize,
    pub marker_count: u32,
    /// Messages generated by the coupled process before turn 1 and folded
    /// into the opening prompt, so turn 1 starts from a filled context.
    pub warmup_messages: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            vocab_size: 2000,
            topic_size: 300,
            coupling: 0.7,
            turn_length: LengthRange { min: 80, max: 150 },
            context_window: 500,
            marker_count: 16,
            warmup_messages: 100,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::InvalidConfig(msg));
        if self.topic_size == 0 {
            return bad("topic_size must be positive".into());
        }
        if self.topic_size > self.vocab_size {
            return bad(format!(
                "topic_size {} exceeds vocab_size {}",
                self.topic_size, self.vocab_size
            ));
        }
        if 2 * self.topic_size + self.marker_count > self.vocab_size {
            return bad(format!(
                "vocab_size {} cannot hold two topics of {} plus {} markers",
                self.vocab_size, self.topic_size, self.marker_count
            ));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return bad(format!("coupling {} outside [0, 1]", self.coupling));
        }
        if self.turn_length.min > self.turn_length.max {
            return bad(format!(
                "turn_length min {} > max {}",
                self.turn_length.min, self.turn_length.max
            ));
        }
        Ok(())
    }

    fn shifted_topic_start(&self) -> u32 {
        self.topic_size
    }

    fn marker_start(&self) -> u32 {
        self.vocab_size - self.marker_count
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    Contradiction,
    TopicShift,
    NonSequitur,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 3] = [
        PerturbationKind::Contradiction,
        PerturbationKind::TopicShift,
        PerturbationKind::NonSequitur,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PerturbationKind::Contradiction => "contradiction",
            PerturbationKind::TopicShift => "topic_shift",
            PerturbationKind::NonSequitur => "non_sequitur",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PerturbationKind::Contradiction => "Contradiction",
            PerturbationKind::TopicShift => "Topic shift",
            PerturbationKind::NonSequitur => "Non-sequitur",
        }
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerturbationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "contradiction" => Ok(PerturbationKind::Contradiction),
            "topic_shift" | "topicshift" => Ok(PerturbationKind::TopicShift),
            "non_sequitur" | "nonsequitur" => Ok(PerturbationKind::NonSequitur),
            other => Err(format!("unknown perturbation kind {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPlan {
    pub kind: PerturbationKind,
    pub injection_turns: Vec<u32>,
    /// Token count of every injected message, identical across kinds.
    pub injection_length: usize,
    /// Copy probability used inside contradiction injections.
    pub contradiction_coupling: f64,
    /// Share of marker tokens inside contradiction injections.
    pub marker_share: f64,
}

impl PerturbationPlan {
    pub fn new(kind: PerturbationKind) -> Self {
        Self {
            kind,
            injection_turns: DEFAULT_INJECTION_TURNS.to_vec(),
            injection_length: 40,
            contradiction_coupling: 0.1,
            marker_share: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTurn {
    pub index: u32,
    pub response: Vec<TokenId>,
    pub next_prompt: Vec<TokenId>,
    pub injected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConversation {
    pub conversation_id: String,
    pub seed: u64,
    pub kind: Option<PerturbationKind>,
    pub injection_turns: Vec<u32>,
    pub initial_prompt: Vec<TokenId>,
    pub turns: Vec<SyntheticTurn>,
}

struct Sampler<'a> {
    config: &'a GeneratorConfig,
    rng: ChaCha8Rng,
    recent: VecDeque<TokenId>,
}

impl Sampler<'_> {
    fn length(&mut self) -> usize {
        let r = self.config.turn_length;
        self.rng.random_range(r.min..=r.max)
    }

    fn uniform(&mut self, start: u32, len: u32) -> TokenId {
        TokenId(start + self.rng.random_range(0..len))
    }

    fn coupled(&mut self, coupling: f64) -> TokenId {
        if !self.recent.is_empty() && self.rng.random_bool(coupling) {
            let i = self.rng.random_range(0..self.recent.len());
            self.recent[i]
        } else {
            self.uniform(0, self.config.topic_size)
        }
    }

    fn message(&mut self, len: usize) -> Vec<TokenId> {
        (0..len).map(|_| self.coupled(self.config.coupling)).collect()
    }

    fn injection(&mut self, plan: &PerturbationPlan) -> Vec<TokenId> {
        let cfg = self.config;
        (0..plan.injection_length)
            .map(|_| match plan.kind {
                PerturbationKind::TopicShift => {
                    self.uniform(cfg.shifted_topic_start(), cfg.topic_size)
                }
                PerturbationKind::NonSequitur => self.uniform(0, cfg.vocab_size),
                PerturbationKind::Contradiction => {
                    if cfg.marker_count > 0 && self.rng.random_bool(plan.marker_share) {
                        self.uniform(cfg.marker_start(), cfg.marker_count)
                    } else {
                        self.coupled(plan.contradiction_coupling)
                    }
                }
            })
            .collect()
    }

    fn remember(&mut self, tokens: &[TokenId]) {
        for &t in tokens {
            if self.recent.len() == self.config.context_window {
                self.recent.pop_front();
            }
            if self.config.context_window > 0 {
                self.recent.push_back(t);
            }
        }
    }
}

/// Generates `n_turns` turns, deterministic in `config.seed`.
pub fn generate_conversation(
    config: &GeneratorConfig,
    n_turns: u32,
    plan: Option<&PerturbationPlan>,
) -> Result<SyntheticConversation, HarnessError> {
    config.validate()?;
    if let Some(plan) = plan {
        if let Some(&t) = plan.injection_turns.iter().find(|&&t| t == 0 || t > n_turns) {
            return Err(HarnessError::PlanOutOfRange { turn: t, n_turns });
        }
        if !(0.0..=1.0).contains(&plan.marker_share)
            || !(0.0..=1.0).contains(&plan.contradiction_coupling)
        {
            return Err(HarnessError::InvalidConfig(
                "plan probabilities must lie in [0, 1]".into(),
            ));
        }
    }

    let mut sampler = Sampler {
        config,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        recent: VecDeque::with_capacity(config.context_window),
    };

    let len = sampler.length();
    let mut initial_prompt: Vec<TokenId> = (0..len)
        .map(|_| sampler.uniform(0, config.topic_size))
        .collect();
    sampler.remember(&initial_prompt);
    for _ in 0..config.warmup_messages {
        let len = sampler.length();
        let message = sampler.message(len);
        sampler.remember(&message);
        initial_prompt.extend(message);
    }

    let mut turns = Vec::with_capacity(n_turns as usize);
    for index in 1..=n_turns {
        let len = sampler.length();
        let response = sampler.message(len);
        sampler.remember(&response);

        let injected = plan.is_some_and(|p| p.injection_turns.contains(&index));
        let next_prompt = match plan {
            Some(plan) if injected => sampler.injection(plan),
            _ => {
                let len = sampler.length();
                sampler.message(len)
            }
        };
        sampler.remember(&next_prompt);

        turns.push(SyntheticTurn {
            index,
            response,
            next_prompt,
            injected,
        });
    }

    Ok(SyntheticConversation {
        conversation_id: match plan {
            Some(p) => format!("synthetic-{}-{}", p.kind, config.seed),
            None => format!("synthetic-control-{}", config.seed),
        },
        seed: config.seed,
        kind: plan.map(|p| p.kind),
        injection_turns: plan.map(|p| p.injection_turns.clone()).unwrap_or_default(),
        initial_prompt,
        turns,
    })
}
