//! Per-conversation monitor ("information digital twin").
//!
//! A [`ConversationState`] owns the growing context accumulator, the metric
//! history, a baseline learned from the first turns, and the deviation flags
//! raised against it. Three detectors read the history:
//!
//! * streaming: per-turn z-score against the frozen baseline,
//! * phase comparison: baseline-window values vs. injection-turn values with
//!   a two-sample t-test and a directional-consistency requirement,
//! * trend: Pearson correlation of a metric against the turn index.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::IdtError;
use crate::infometrics::{metrics_against, Metric, TurnMetrics};
use crate::stats::{
    cohens_d, mean, pearson, sample_std, t_test, CorrelationResult, Direction, StatsError,
    TTestResult, TTestVariant,
};
use crate::token_stats::{EntropyAccumulator, TokenBag, TokenId};

pub const Z_SATURATION: f64 = 1e12;

/// Inclusive range of 1-based turn indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRange {
    pub start: u32,
    pub end: u32,
}

impl TurnRange {
    pub fn new(start: u32, end: u32) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, turn: u32) -> bool {
        (self.start..=self.end).contains(&turn)
    }

    pub fn len(&self) -> usize {
        if self.end < self.start {
            0
        } else {
            (self.end - self.start + 1) as usize
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for TurnRange {
    fn default() -> Self {
        Self { start: 1, end: 30 }
    }
}

/// How "consistent directional shift" is judged in phase detection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionalMode {
    /// Every injection value lies on the same side of the baseline mean as
    /// the mean shift.
    #[default]
    UniformSign,
    /// Uniform sign, and the shift must match the metric's expected
    /// degradation direction.
    Expected,
}

/// Direction each metric moves when coupling degrades.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedDirections {
    pub p: Direction,
    pub hf: Direction,
    pub hb: Direction,
    pub delta_h: Direction,
}

impl ExpectedDirections {
    pub fn get(&self, metric: Metric) -> Direction {
        match metric {
            Metric::P => self.p,
            Metric::Hf => self.hf,
            Metric::Hb => self.hb,
            Metric::DeltaH => self.delta_h,
        }
    }
}

impl Default for ExpectedDirections {
    fn default() -> Self {
        Self {
            p: Direction::Down,
            hf: Direction::Up,
            hb: Direction::Up,
            delta_h: Direction::Down,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub baseline_window: TurnRange,
    /// Band half-width in baseline standard deviations.
    pub band_k: f64,
    pub z_threshold: f64,
    /// Emit per-turn deviation flags once the baseline exists.
    pub streaming: bool,
    pub monitored: Vec<Metric>,
    pub alpha: f64,
    pub directional: DirectionalMode,
    pub expected: ExpectedDirections,
    pub variant: TTestVariant,
    pub trend_min_window: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            baseline_window: TurnRange::default(),
            band_k: 2.0,
            z_threshold: 3.0,
            streaming: true,
            monitored: Metric::ALL.to_vec(),
            alpha: 0.05,
            directional: DirectionalMode::default(),
            expected: ExpectedDirections::default(),
            variant: TTestVariant::Welch,
            trend_min_window: 50,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricBaseline {
    pub mean: f64,
    pub std: f64,
    pub lower: f64,
    pub upper: f64,
}

impl MetricBaseline {
    fn from_values(values: &[f64], k: f64) -> Self {
        let mean = mean(values);
        let std = sample_std(values);
        Self {
            mean,
            std,
            lower: mean - k * std,
            upper: mean + k * std,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }

    /// z-score of `v`, saturated at ±[`Z_SATURATION`] so it stays finite
    /// for zero-width baselines.
    pub fn z(&self, v: f64) -> f64 {
        let d = v - self.mean;
        if d == 0.0 {
            0.0
        } else if self.std > 0.0 {
            (d / self.std).clamp(-Z_SATURATION, Z_SATURATION)
        } else {
            Z_SATURATION.copysign(d)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub window: TurnRange,
    pub k: f64,
    pub p: MetricBaseline,
    pub hf: MetricBaseline,
    pub hb: MetricBaseline,
    pub delta_h: MetricBaseline,
}

impl BaselineModel {
    pub fn get(&self, metric: Metric) -> &MetricBaseline {
        match metric {
            Metric::P => &self.p,
            Metric::Hf => &self.hf,
            Metric::Hb => &self.hb,
            Metric::DeltaH => &self.delta_h,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationFlag {
    pub turn_index: u32,
    pub metric: Metric,
    pub z_score: f64,
    pub direction: Direction,
    pub recovered_at: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDetection {
    pub metric: Metric,
    pub test: TTestResult,
    /// Absent when both phases have zero variance.
    pub effect: Option<f64>,
    /// Sign of (injection mean − baseline mean).
    pub shift: Direction,
    pub consistent: bool,
    pub detected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub alpha: f64,
    pub baseline_window: TurnRange,
    pub injection_turns: Vec<u32>,
    pub metrics: Vec<MetricDetection>,
    pub union_detected: bool,
}

impl DetectionReport {
    pub fn get(&self, metric: Metric) -> Option<&MetricDetection> {
        self.metrics.iter().find(|m| m.metric == metric)
    }

    pub fn detected(&self, metric: Metric) -> bool {
        self.get(metric).is_some_and(|m| m.detected)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendOutcome {
    pub metric: Metric,
    pub window: TurnRange,
    /// `None` when the series is constant (no trend).
    pub correlation: Option<CorrelationResult>,
    pub flagged: bool,
}

/// Result of one processed turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub metrics: TurnMetrics,
    pub new_flags: Vec<DeviationFlag>,
    pub baseline_learned: bool,
}

/// One monitored conversation.
#[derive(Clone, Debug)]
pub struct ConversationState {
    id: String,
    config: DetectorConfig,
    context: EntropyAccumulator,
    history: Vec<TurnMetrics>,
    baseline: Option<BaselineModel>,
    flags: Vec<DeviationFlag>,
}

impl ConversationState {
    /// Starts a conversation with `initial_prompt` as the seed context.
    pub fn new(id: impl Into<String>, initial_prompt: &[TokenId], config: DetectorConfig) -> Self {
        let mut context = EntropyAccumulator::new();
        context.extend(initial_prompt);
        Self {
            id: id.into(),
            config,
            context,
            history: Vec::new(),
            baseline: None,
            flags: Vec::new(),
        }
    }

    /// Reassembles a state from persisted parts.
    pub fn from_parts(
        id: String,
        config: DetectorConfig,
        context: EntropyAccumulator,
        history: Vec<TurnMetrics>,
        baseline: Option<BaselineModel>,
        flags: Vec<DeviationFlag>,
    ) -> Result<Self, IdtError> {
        for (i, m) in history.iter().enumerate() {
            if m.turn_index as usize != i + 1 {
                return Err(IdtError::InvalidState(format!(
                    "history entry {} has turn index {}",
                    i + 1,
                    m.turn_index
                )));
            }
        }
        Ok(Self {
            id,
            config,
            context,
            history,
            baseline,
            flags,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn context(&self) -> &EntropyAccumulator {
        &self.context
    }

    pub fn turn_count(&self) -> u32 {
        self.history.len() as u32
    }

    pub fn next_turn_index(&self) -> u32 {
        self.turn_count() + 1
    }

    pub fn history(&self) -> &[TurnMetrics] {
        &self.history
    }

    pub fn baseline(&self) -> Option<&BaselineModel> {
        self.baseline.as_ref()
    }

    pub fn flags(&self) -> &[DeviationFlag] {
        &self.flags
    }

    pub fn turn(&self, index: u32) -> Option<&TurnMetrics> {
        if index == 0 {
            return None;
        }
        self.history.get(index as usize - 1)
    }

    /// Processes turn `index`, which must be the next one in sequence.
    pub fn process_turn_at(
        &mut self,
        index: u32,
        response: &[TokenId],
        next_prompt: &[TokenId],
    ) -> Result<TurnOutcome, IdtError> {
        let expected = self.next_turn_index();
        if index != expected {
            return Err(IdtError::OutOfOrderTurn { expected, got: index });
        }
        Ok(self.process_turn(response, next_prompt))
    }

    /// Computes metrics against the current context, then appends the
    /// response and the next prompt to it.
    pub fn process_turn(&mut self, response: &[TokenId], next_prompt: &[TokenId]) -> TurnOutcome {
        let index = self.next_turn_index();
        let a = TokenBag::from_tokens(response);
        let sp = TokenBag::from_tokens(next_prompt);
        let metrics = metrics_against(&self.context, &a, &sp, index);

        self.context.extend(response);
        self.context.extend(next_prompt);
        self.history.push(metrics);

        let mut baseline_learned = false;
        let window = self.config.baseline_window;
        if self.baseline.is_none() && index == window.end && window.start >= 1 {
            if let Ok(model) = self.compute_baseline(window) {
                self.baseline = Some(model);
                baseline_learned = true;
            }
        }

        let new_flags = if self.config.streaming && !baseline_learned {
            self.stream_flags(&metrics)
        } else {
            Vec::new()
        };

        TurnOutcome {
            metrics,
            new_flags,
            baseline_learned,
        }
    }

    fn stream_flags(&mut self, metrics: &TurnMetrics) -> Vec<DeviationFlag> {
        let Some(baseline) = self.baseline.as_ref() else {
            return Vec::new();
        };
        let turn = metrics.turn_index;
        if baseline.window.contains(turn) {
            return Vec::new();
        }

        for flag in self.flags.iter_mut().filter(|f| f.recovered_at.is_none()) {
            if baseline.get(flag.metric).contains(flag.metric.value(metrics)) {
                flag.recovered_at = Some(turn);
            }
        }

        let mut new_flags = Vec::new();
        for &metric in &self.config.monitored {
            let z = baseline.get(metric).z(metric.value(metrics));
            if z.abs() >= self.config.z_threshold {
                new_flags.push(DeviationFlag {
                    turn_index: turn,
                    metric,
                    z_score: z,
                    direction: Direction::of(z),
                    recovered_at: None,
                });
            }
        }
        self.flags.extend(new_flags.iter().cloned());
        new_flags
    }

    fn window_values(&self, metric: Metric, window: TurnRange) -> Result<Vec<f64>, IdtError> {
        if window.start == 0 || window.is_empty() || window.end > self.turn_count() {
            return Err(IdtError::WindowNotCovered {
                start: window.start,
                end: window.end,
                available: self.turn_count(),
            });
        }
        Ok((window.start..=window.end)
            .map(|t| metric.value(&self.history[t as usize - 1]))
            .collect())
    }

    fn compute_baseline(&self, window: TurnRange) -> Result<BaselineModel, IdtError> {
        let k = self.config.band_k;
        let b = |m| -> Result<MetricBaseline, IdtError> {
            Ok(MetricBaseline::from_values(&self.window_values(m, window)?, k))
        };
        Ok(BaselineModel {
            window,
            k,
            p: b(Metric::P)?,
            hf: b(Metric::Hf)?,
            hb: b(Metric::Hb)?,
            delta_h: b(Metric::DeltaH)?,
        })
    }

    /// Computes a baseline over `window` without installing it.
    pub fn learn_baseline(&self, window: TurnRange) -> Result<BaselineModel, IdtError> {
        self.compute_baseline(window)
    }

    /// Replaces the frozen baseline.
    pub fn relearn_baseline(&mut self, window: TurnRange) -> Result<&BaselineModel, IdtError> {
        let model = self.compute_baseline(window)?;
        Ok(self.baseline.insert(model))
    }

    /// Phase comparison of the baseline window against `injection_turns`.
    pub fn detect_phase(
        &self,
        injection_turns: &[u32],
        alpha: f64,
        metrics: &[Metric],
    ) -> Result<DetectionReport, IdtError> {
        if injection_turns.len() < 2 {
            return Err(IdtError::TooFewInjections(injection_turns.len()));
        }
        for &t in injection_turns {
            if self.turn(t).is_none() {
                return Err(IdtError::MissingTurn(t));
            }
        }
        let window = self.config.baseline_window;

        let mut results = Vec::with_capacity(metrics.len());
        for &metric in metrics {
            let base = self.window_values(metric, window)?;
            let inj: Vec<f64> = injection_turns
                .iter()
                .map(|&t| metric.value(&self.history[t as usize - 1]))
                .collect();
            let test = t_test(&base, &inj, self.config.variant)?;
            let effect = match cohens_d(&base, &inj) {
                Ok(e) => Some(e.cohens_d),
                Err(StatsError::ZeroVariance) => None,
                Err(e) => return Err(e.into()),
            };
            let shift = test.direction;
            let mut consistent = shift != Direction::Flat
                && inj
                    .iter()
                    .all(|&v| Direction::of(v - test.mean_a) == shift);
            if self.config.directional == DirectionalMode::Expected {
                consistent &= shift == self.config.expected.get(metric);
            }
            results.push(MetricDetection {
                metric,
                test,
                effect,
                shift,
                consistent,
                detected: test.p_two_sided < alpha && consistent,
            });
        }
        let union_detected = results.iter().any(|r| r.detected);
        Ok(DetectionReport {
            alpha,
            baseline_window: window,
            injection_turns: injection_turns.to_vec(),
            metrics: results,
            union_detected,
        })
    }

    /// Trend of `metric` against turn index over `window`.
    pub fn detect_trend(
        &self,
        metric: Metric,
        window: TurnRange,
        alpha: f64,
    ) -> Result<TrendOutcome, IdtError> {
        let values = self.window_values(metric, window)?;
        let turns: Vec<f64> = (window.start..=window.end).map(f64::from).collect();
        let mut out = trend_test(
            &turns,
            &values,
            self.config.expected.get(metric),
            alpha,
            self.config.trend_min_window,
        )?;
        out.metric = metric;
        out.window = window;
        Ok(out)
    }

    /// Turns until `metric` re-enters the baseline band after `from_turn`.
    pub fn track_recovery(&self, metric: Metric, from_turn: u32, k_max: u32) -> Option<u32> {
        let band = self.baseline.as_ref()?.get(metric);
        (1..=k_max).find(|&j| {
            self.turn(from_turn + j)
                .is_some_and(|m| band.contains(metric.value(m)))
        })
    }

    pub fn track_flag_recovery(&self, flag: &DeviationFlag, k_max: u32) -> Option<u32> {
        self.track_recovery(flag.metric, flag.turn_index, k_max)
    }
}

/// Pearson trend test on an explicit series. `degrade` is the direction of
/// the correlation that counts as degradation.
pub fn trend_test(
    turns: &[f64],
    values: &[f64],
    degrade: Direction,
    alpha: f64,
    min_window: usize,
) -> Result<TrendOutcome, IdtError> {
    if values.len() < min_window.max(3) {
        return Err(IdtError::InsufficientWindow {
            got: values.len(),
            min: min_window.max(3),
        });
    }
    let window = TurnRange::new(
        turns.first().map_or(0, |&t| t as u32),
        turns.last().map_or(0, |&t| t as u32),
    );
    match pearson(values, turns) {
        Ok(c) => Ok(TrendOutcome {
            metric: Metric::P,
            window,
            correlation: Some(c),
            flagged: c.p_two_sided < alpha && Direction::of(c.r) == degrade,
        }),
        Err(StatsError::ZeroVariance) => Ok(TrendOutcome {
            metric: Metric::P,
            window,
            correlation: None,
            flagged: false,
        }),
        Err(e) => Err(e.into()),
    }
}

/// Conversations keyed by id, for single-threaded drivers.
#[derive(Debug, Default)]
pub struct Registry {
    config: DetectorConfig,
    conversations: HashMap<String, ConversationState>,
}

impl Registry {
    pub fn new(config: DetectorConfig) -> Self {
        Self {
            config,
            conversations: HashMap::new(),
        }
    }

    pub fn init_conversation(
        &mut self,
        id: &str,
        initial_prompt: &[TokenId],
    ) -> Result<&mut ConversationState, IdtError> {
        if self.conversations.contains_key(id) {
            return Err(IdtError::DuplicateConversation(id.to_string()));
        }
        let state = ConversationState::new(id, initial_prompt, self.config.clone());
        Ok(self.conversations.entry(id.to_string()).or_insert(state))
    }

    pub fn get(&self, id: &str) -> Option<&ConversationState> {
        self.conversations.get(id)
    }

    pub fn get_mut(&mut self, id: &str) -> Result<&mut ConversationState, IdtError> {
        self.conversations
            .get_mut(id)
            .ok_or_else(|| IdtError::UnknownConversation(id.to_string()))
    }

    pub fn process_turn(
        &mut self,
        id: &str,
        index: u32,
        response: &[TokenId],
        next_prompt: &[TokenId],
    ) -> Result<TurnOutcome, IdtError> {
        self.get_mut(id)?.process_turn_at(index, response, next_prompt)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        let sorted: BTreeMap<&str, ()> =
            self.conversations.keys().map(|k| (k.as_str(), ())).collect();
        sorted.into_keys()
    }
}
