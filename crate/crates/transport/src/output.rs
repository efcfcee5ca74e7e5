//! CSV and text renderings of metrics and detection reports.

use std::io::Write;

use idt_core::{DetectionReport, DeviationFlag, Direction, TurnMetrics, TurnOutcome};

use crate::TransportError;

pub const METRIC_COLUMNS: [&str; 12] = [
    "turn_index",
    "H(S)",
    "H(A)",
    "H(S')",
    "H(S,A)",
    "H(S,A,S')",
    "MI",
    "P",
    "Hf",
    "Hb",
    "ΔH",
    "flags",
];

/// Shortest decimal that parses back to the same double.
pub fn num(x: f64) -> String {
    format!("{x}")
}

fn dir(d: Direction) -> &'static str {
    match d {
        Direction::Up => "up",
        Direction::Down => "down",
        Direction::Flat => "flat",
    }
}

/// `P:down;Hb:up`
pub fn flags_cell(flags: &[DeviationFlag]) -> String {
    flags
        .iter()
        .map(|f| format!("{}:{}", f.metric, dir(f.direction)))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn metric_row(m: &TurnMetrics, flags: &[DeviationFlag]) -> Vec<String> {
    vec![
        m.turn_index.to_string(),
        num(m.h_s),
        num(m.h_a),
        num(m.h_sp),
        num(m.h_sa),
        num(m.h_sasp),
        num(m.mi),
        num(m.p),
        num(m.hf),
        num(m.hb),
        num(m.delta_h),
        flags_cell(flags),
    ]
}

pub fn write_metrics_csv<W: Write>(w: W, outcomes: &[TurnOutcome]) -> Result<(), TransportError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRIC_COLUMNS)?;
    for o in outcomes {
        out.write_record(metric_row(&o.metrics, &o.new_flags))?;
    }
    out.flush()?;
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, num)
}

pub fn write_detection_csv<W: Write>(w: W, report: &DetectionReport) -> Result<(), TransportError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "metric",
        "t",
        "df",
        "p_two_sided",
        "cohens_d",
        "direction",
        "consistent",
        "detected",
    ])?;
    for m in &report.metrics {
        out.write_record([
            m.metric.to_string(),
            num(m.test.t),
            num(m.test.df),
            num(m.test.p_two_sided),
            opt(m.effect),
            dir(m.shift).to_string(),
            m.consistent.to_string(),
            m.detected.to_string(),
        ])?;
    }
    out.write_record(["union", "", "", "", "", "", "", &report.union_detected.to_string()])?;
    out.flush()?;
    Ok(())
}

pub fn detection_text(report: &DetectionReport) -> String {
    let turns: Vec<String> = report.injection_turns.iter().map(u32::to_string).collect();
    let mut s = format!(
        "Baseline turns {}-{} vs injection turns {} (alpha {})\n\n",
        report.baseline_window.start,
        report.baseline_window.end,
        turns.join(", "),
        report.alpha
    );
    s.push_str(&format!(
        "{:<6} {:>10} {:>8} {:>10} {:>8}  {:<9} {:<10} {}\n",
        "metric", "t", "df", "p", "d", "direction", "consistent", "detected"
    ));
    let yn = |b: bool| if b { "yes" } else { "no" };
    for m in &report.metrics {
        let d = m.effect.map_or_else(|| "-".to_string(), |d| format!("{d:.3}"));
        s.push_str(&format!(
            "{:<6} {:>10.4} {:>8.3} {:>10.3e} {:>8}  {:<9} {:<10} {}\n",
            m.metric.to_string(),
            m.test.t,
            m.test.df,
            m.test.p_two_sided,
            d,
            dir(m.shift),
            yn(m.consistent),
            yn(m.detected)
        ));
    }
    s.push_str(&format!(
        "\nUnion: {}\n",
        if report.union_detected { "detected" } else { "not detected" }
    ));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use idt_core::Metric;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-17, 7.0, f64::MIN_POSITIVE] {
            assert_eq!(num(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn flag_cell() {
        let f = |metric, direction| DeviationFlag {
            turn_index: 40,
            metric,
            z_score: 4.0,
            direction,
            recovered_at: None,
        };
        assert_eq!(
            flags_cell(&[f(Metric::P, Direction::Down), f(Metric::Hb, Direction::Up)]),
            "P:down;Hb:up"
        );
        assert_eq!(flags_cell(&[]), "");
    }
}
