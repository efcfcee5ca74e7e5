//! Detection-rate and baseline-statistics tables.

use idt_core::Metric;
use serde::{Deserialize, Serialize};

use crate::experiment::{ExperimentSummary, MetricCounts};
use crate::generator::PerturbationKind;

/// Reference figures measured on live multi-model traffic. They are not
/// reproducible with synthetic conversations and are printed for context.
pub const REFERENCE_NOTE: &str = "Reference (live model traffic, not reproduced by synthetic runs): \
baseline P = 0.275 ± 0.029, ΔH = -3.10 ± 0.81; P correlated with structural similarity \
in 85% of conditions and with judge scores in 44%.";

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        if self.header.is_empty() {
            return String::new();
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        // writing into a Vec cannot fail
        w.write_record(&self.header).expect("in-memory csv");
        for row in &self.rows {
            w.write_record(row).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 cells")
    }

    /// Column-aligned plain text.
    pub fn to_text(&self) -> String {
        if self.header.is_empty() {
            return String::new();
        }
        let ncol = self.header.len();
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate().take(ncol) {
                widths[i] = widths[i].max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, cell) in cells.iter().enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                let pad = widths[i] - cell.chars().count();
                if i == 0 {
                    s.push_str(cell);
                    s.extend(std::iter::repeat_n(' ', pad));
                } else {
                    s.extend(std::iter::repeat_n(' ', pad));
                    s.push_str(cell);
                }
            }
            s.trim_end().to_string()
        };
        let mut out = line(&self.header);
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (ncol - 1)));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryTables {
    pub detection: Table,
    pub baseline: Table,
}

impl SummaryTables {
    pub fn to_text(&self) -> String {
        if self.detection.is_empty() && self.baseline.is_empty() {
            return String::new();
        }
        format!(
            "Detection rates\n\n{}\nBaseline statistics (turn window per run)\n\n{}\n{}\n",
            self.detection.to_text(),
            self.baseline.to_text(),
            REFERENCE_NOTE
        )
    }
}

fn percent(count: usize, n: usize) -> String {
    if n == 0 {
        "-".into()
    } else {
        format!("{:.0}%", 100.0 * count as f64 / n as f64)
    }
}

const ROWS: [(Option<Metric>, &str); 5] = [
    (Some(Metric::P), "Bipredictability (P)"),
    (Some(Metric::Hb), "Backward uncertainty (Hb)"),
    (Some(Metric::DeltaH), "Predictive asymmetry (dH)"),
    (Some(Metric::Hf), "Forward uncertainty (Hf)"),
    (None, "IDT (union)"),
];

fn count_of(c: &MetricCounts, metric: Option<Metric>) -> usize {
    metric.map_or(c.union, |m| c.get(m))
}

/// Builds the detection-rate table (one column per perturbation kind, an
/// overall column, and a control column when unperturbed runs are present)
/// and the per-run baseline table.
pub fn summarize_table(summaries: &[ExperimentSummary]) -> SummaryTables {
    let runs: usize = summaries.iter().map(|s| s.n_runs()).sum();
    if runs == 0 {
        return SummaryTables::default();
    }

    let mut columns: Vec<(String, MetricCounts, usize)> = Vec::new();
    let mut overall = (MetricCounts::default(), 0usize);
    for kind in PerturbationKind::ALL {
        let mut counts = MetricCounts::default();
        let mut n = 0;
        for s in summaries.iter().filter(|s| s.kind == Some(kind)) {
            counts.add(&s.detections);
            n += s.n_runs();
        }
        if n > 0 {
            overall.0.add(&counts);
            overall.1 += n;
            columns.push((format!("{} (n={n})", kind.label()), counts, n));
        }
    }
    if overall.1 > 0 {
        columns.push((format!("Overall (n={})", overall.1), overall.0, overall.1));
    }
    let mut control = (MetricCounts::default(), 0usize);
    for s in summaries.iter().filter(|s| s.is_control()) {
        control.0.add(&s.detections);
        control.1 += s.n_runs();
    }
    if control.1 > 0 {
        columns.push((format!("Unperturbed (n={})", control.1), control.0, control.1));
    }

    let mut detection = Table {
        header: std::iter::once("Metric".to_string())
            .chain(columns.iter().map(|c| c.0.clone()))
            .collect(),
        rows: Vec::new(),
    };
    for (metric, label) in ROWS {
        let mut row = vec![label.to_string()];
        row.extend(columns.iter().map(|(_, c, n)| percent(count_of(c, metric), *n)));
        detection.rows.push(row);
    }

    let mut baseline = Table {
        header: ["Condition", "Seed", "P mean", "P std", "dH mean", "dH std", "Turns"]
            .map(String::from)
            .to_vec(),
        rows: Vec::new(),
    };
    // pooled over every baseline turn of every run
    let mut pooled = Pooled::default();
    for s in summaries {
        for run in &s.runs {
            let n = run.baseline.window.len();
            let (p, dh) = (&run.baseline.p, &run.baseline.delta_h);
            pooled.push(n, p.mean, p.std, dh.mean, dh.std);
            baseline.rows.push(vec![
                run.kind.map_or("control", |k| k.as_str()).to_string(),
                run.seed.to_string(),
                format!("{:.4}", p.mean),
                format!("{:.4}", p.std),
                format!("{:.4}", dh.mean),
                format!("{:.4}", dh.std),
                n.to_string(),
            ]);
        }
    }
    if let Some(row) = pooled.row() {
        baseline.rows.push(row);
    }

    SummaryTables {
        detection,
        baseline,
    }
}

/// Combines per-run (n, mean, std) into statistics over all turns.
#[derive(Default)]
struct Pooled {
    parts: Vec<(usize, f64, f64, f64, f64)>,
}

impl Pooled {
    fn push(&mut self, n: usize, pm: f64, ps: f64, dm: f64, ds: f64) {
        self.parts.push((n, pm, ps, dm, ds));
    }

    fn combine(parts: &[(usize, f64, f64)]) -> (f64, f64) {
        let total: usize = parts.iter().map(|p| p.0).sum();
        let mean = parts.iter().map(|&(n, m, _)| n as f64 * m).sum::<f64>() / total as f64;
        if total < 2 {
            return (mean, 0.0);
        }
        let ss: f64 = parts
            .iter()
            .map(|&(n, m, s)| (n as f64 - 1.0).max(0.0) * s * s + n as f64 * (m - mean).powi(2))
            .sum();
        (mean, (ss / (total as f64 - 1.0)).sqrt())
    }

    fn row(&self) -> Option<Vec<String>> {
        if self.parts.len() < 2 {
            return None;
        }
        let total: usize = self.parts.iter().map(|p| p.0).sum();
        let p: Vec<_> = self.parts.iter().map(|x| (x.0, x.1, x.2)).collect();
        let d: Vec<_> = self.parts.iter().map(|x| (x.0, x.3, x.4)).collect();
        let (pm, ps) = Self::combine(&p);
        let (dm, ds) = Self::combine(&d);
        Some(vec![
            "all".into(),
            "-".into(),
            format!("{pm:.4}"),
            format!("{ps:.4}"),
            format!("{dm:.4}"),
            format!("{ds:.4}"),
            total.to_string(),
        ])
    }
}
