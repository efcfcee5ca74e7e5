use idt_core::{BaselineModel, ConversationState, DetectionReport, DetectorConfig, Metric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::generator::{
    generate_conversation, GeneratorConfig, PerturbationKind, PerturbationPlan,
    SyntheticConversation, DEFAULT_INJECTION_TURNS,
};
use crate::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub detector: DetectorConfig,
    pub n_turns: u32,
    /// Longest recovery horizon, in turns after an injection.
    pub recovery_k_max: u32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            detector: DetectorConfig::default(),
            n_turns: 100,
            recovery_k_max: 5,
        }
    }
}

/// Per-metric counts, plus the union verdict.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub p: usize,
    pub hf: usize,
    pub hb: usize,
    pub delta_h: usize,
    pub union: usize,
}

impl MetricCounts {
    pub fn get(&self, metric: Metric) -> usize {
        match metric {
            Metric::P => self.p,
            Metric::Hf => self.hf,
            Metric::Hb => self.hb,
            Metric::DeltaH => self.delta_h,
        }
    }

    fn record(&mut self, report: &DetectionReport) {
        self.p += report.detected(Metric::P) as usize;
        self.hf += report.detected(Metric::Hf) as usize;
        self.hb += report.detected(Metric::Hb) as usize;
        self.delta_h += report.detected(Metric::DeltaH) as usize;
        self.union += report.union_detected as usize;
    }

    pub fn add(&mut self, other: &MetricCounts) {
        self.p += other.p;
        self.hf += other.hf;
        self.hb += other.hb;
        self.delta_h += other.delta_h;
        self.union += other.union;
    }
}

/// How quickly P re-entered the baseline band after each injection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryStats {
    pub injections: usize,
    pub within_one: usize,
    pub within_two: usize,
    /// Not back inside the band within the configured horizon.
    pub unrecovered: usize,
}

impl RecoveryStats {
    pub fn add(&mut self, other: &RecoveryStats) {
        self.injections += other.injections;
        self.within_one += other.within_one;
        self.within_two += other.within_two;
        self.unrecovered += other.unrecovered;
    }

    pub fn fraction_within_one(&self) -> Option<f64> {
        (self.injections > 0).then(|| self.within_one as f64 / self.injections as f64)
    }

    pub fn fraction_within_two(&self) -> Option<f64> {
        (self.injections > 0).then(|| self.within_two as f64 / self.injections as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub kind: Option<PerturbationKind>,
    pub report: DetectionReport,
    pub baseline: BaselineModel,
    pub recovery: RecoveryStats,
    /// Mean P over the injection turns and over the baseline window.
    pub injection_p_mean: f64,
    pub baseline_p_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    /// `None` for unperturbed control runs.
    pub kind: Option<PerturbationKind>,
    pub runs: Vec<RunRecord>,
    pub detections: MetricCounts,
    pub recovery: RecoveryStats,
}

impl ExperimentSummary {
    pub fn n_runs(&self) -> usize {
        self.runs.len()
    }

    pub fn is_control(&self) -> bool {
        self.kind.is_none()
    }

    pub fn detection_rate(&self, metric: Metric) -> Option<f64> {
        self.rate(self.detections.get(metric))
    }

    pub fn union_rate(&self) -> Option<f64> {
        self.rate(self.detections.union)
    }

    /// On control runs every detection is a false positive.
    pub fn false_positive_rate(&self, metric: Metric) -> Option<f64> {
        if self.is_control() {
            self.detection_rate(metric)
        } else {
            None
        }
    }

    fn rate(&self, count: usize) -> Option<f64> {
        (!self.runs.is_empty()).then(|| count as f64 / self.runs.len() as f64)
    }
}

/// Feeds a synthetic transcript through a fresh conversation monitor.
pub fn replay(conversation: &SyntheticConversation, detector: &DetectorConfig) -> ConversationState {
    let mut state = ConversationState::new(
        conversation.conversation_id.clone(),
        &conversation.initial_prompt,
        detector.clone(),
    );
    for turn in &conversation.turns {
        state.process_turn(&turn.response, &turn.next_prompt);
    }
    state
}

fn run_one(
    config: &ExperimentConfig,
    plan: Option<&PerturbationPlan>,
    seed: u64,
) -> Result<RunRecord, HarnessError> {
    let generator = config.generator.with_seed(seed);
    let conversation = generate_conversation(&generator, config.n_turns, plan)?;
    let state = replay(&conversation, &config.detector);

    let injections: Vec<u32> = match plan {
        Some(p) => p.injection_turns.clone(),
        None => DEFAULT_INJECTION_TURNS.to_vec(),
    };
    let report = state.detect_phase(&injections, config.detector.alpha, &Metric::ALL)?;
    let baseline = match state.baseline() {
        Some(b) => b.clone(),
        None => state.learn_baseline(config.detector.baseline_window)?,
    };

    let mut recovery = RecoveryStats::default();
    let mut with_baseline = state.clone();
    if with_baseline.baseline().is_none() {
        with_baseline.relearn_baseline(config.detector.baseline_window)?;
    }
    for &t in &injections {
        recovery.injections += 1;
        match with_baseline.track_recovery(Metric::P, t, config.recovery_k_max) {
            Some(1) => {
                recovery.within_one += 1;
                recovery.within_two += 1;
            }
            Some(2) => recovery.within_two += 1,
            Some(_) => {}
            None => recovery.unrecovered += 1,
        }
    }

    let p = |t: u32| state.turn(t).map(|m| m.p).unwrap_or(f64::NAN);
    let injection_p_mean = injections.iter().map(|&t| p(t)).sum::<f64>() / injections.len() as f64;

    Ok(RunRecord {
        seed,
        kind: plan.map(|p| p.kind),
        injection_p_mean,
        baseline_p_mean: baseline.p.mean,
        report,
        baseline,
        recovery,
    })
}

/// Runs `n_seeds` independent conversations (seeds `generator.seed + i`).
/// Without a plan, the default injection schedule is used as pseudo-injection
/// turns on unperturbed conversations.
pub fn run_experiment(
    config: &ExperimentConfig,
    plan: Option<&PerturbationPlan>,
    n_seeds: usize,
) -> Result<ExperimentSummary, HarnessError> {
    let base_seed = config.generator.seed;
    let runs = (0..n_seeds as u64)
        .into_par_iter()
        .map(|i| run_one(config, plan, base_seed.wrapping_add(i)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut detections = MetricCounts::default();
    let mut recovery = RecoveryStats::default();
    for run in &runs {
        detections.record(&run.report);
        recovery.add(&run.recovery);
    }
    Ok(ExperimentSummary {
        kind: plan.map(|p| p.kind),
        runs,
        detections,
        recovery,
    })
}
