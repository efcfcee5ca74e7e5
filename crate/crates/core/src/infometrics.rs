//! Per-turn coupling metrics over the (context, response, next prompt) loop.
//!
//! Joint terms are pooled-bag entropies: the token counts of the parts are
//! summed and the entropy of the merged distribution is taken.
//!
//! ```text
//! MI  = H(S,A) + H(S') − H(S,A,S')
//! P   = MI / (H(S) + H(A) + H(S'))
//! Hf  = H(S,A,S') − H(S,A)
//! Hb  = H(S,A,S') − H(S')
//! ΔH  = Hf − Hb
//! ```
//!
//! The pooled estimator does not guarantee `MI ≥ 0`, so neither the sign of
//! MI nor the classical `P ≤ 0.5` bound is enforced; raw values are reported.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::token_stats::{EntropyAccumulator, TokenBag};

/// Denominators at or below this many bits make `P` zero.
pub const P_DENOMINATOR_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnMetrics {
    pub turn_index: u32,
    pub h_s: f64,
    pub h_a: f64,
    pub h_sp: f64,
    pub h_sa: f64,
    pub h_sasp: f64,
    pub mi: f64,
    pub p: f64,
    pub hf: f64,
    pub hb: f64,
    pub delta_h: f64,
    /// Token totals of S, A and S'.
    pub token_counts: [u64; 3],
}

impl TurnMetrics {
    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn delta_h(&self) -> f64 {
        self.delta_h
    }

    pub fn get(&self, metric: Metric) -> f64 {
        metric.value(self)
    }
}

pub fn p_of(m: &TurnMetrics) -> f64 {
    m.p
}

pub fn delta_h_of(m: &TurnMetrics) -> f64 {
    m.delta_h
}

/// The monitored metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "P")]
    P,
    #[serde(rename = "Hf")]
    Hf,
    #[serde(rename = "Hb")]
    Hb,
    #[serde(rename = "dH")]
    DeltaH,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::P, Metric::Hf, Metric::Hb, Metric::DeltaH];

    pub fn value(self, m: &TurnMetrics) -> f64 {
        match self {
            Metric::P => m.p,
            Metric::Hf => m.hf,
            Metric::Hb => m.hb,
            Metric::DeltaH => m.delta_h,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::P => "P",
            Metric::Hf => "Hf",
            Metric::Hb => "Hb",
            Metric::DeltaH => "dH",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "p" => Ok(Metric::P),
            "hf" => Ok(Metric::Hf),
            "hb" => Ok(Metric::Hb),
            "dh" | "deltah" | "delta_h" | "Δh" => Ok(Metric::DeltaH),
            other => Err(format!("unknown metric {other:?} (expected P, Hf, Hb or dH)")),
        }
    }
}

/// Metrics from three standalone bags.
pub fn compute_turn_metrics(
    s: &TokenBag,
    a: &TokenBag,
    sp: &TokenBag,
    turn_index: u32,
) -> TurnMetrics {
    metrics_against(&EntropyAccumulator::from_bag(s), a, sp, turn_index)
}

/// Metrics with the context held in an accumulator. Cost is proportional to
/// the distinct tokens of `a` and `sp`, independent of the context size.
pub fn metrics_against(
    context: &EntropyAccumulator,
    a: &TokenBag,
    sp: &TokenBag,
    turn_index: u32,
) -> TurnMetrics {
    let h_s = context.entropy();
    let h_a = a.entropy();
    let h_sp = sp.entropy();
    let h_sa = context.entropy_with(&[a]);
    let h_sasp = context.entropy_with(&[a, sp]);

    let mi = h_sa + h_sp - h_sasp;
    let denom = h_s + h_a + h_sp;
    let p = if denom > P_DENOMINATOR_EPS { mi / denom } else { 0.0 };
    let hf = h_sasp - h_sa;
    let hb = h_sasp - h_sp;

    TurnMetrics {
        turn_index,
        h_s,
        h_a,
        h_sp,
        h_sa,
        h_sasp,
        mi,
        p,
        hf,
        hb,
        delta_h: hf - hb,
        token_counts: [context.total(), a.total(), sp.total()],
    }
}
