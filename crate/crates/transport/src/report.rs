//! SVG trajectory chart of P with the baseline band and injection markers.

use std::fmt::Write as _;
use std::io::Read;

use idt_core::stats::{mean, sample_std};
use idt_core::TurnRange;
use idt_harness::REFERENCE_NOTE;

use crate::TransportError;

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 90.0;

/// Reads `(turn_index, P)` pairs from a metrics CSV.
pub fn read_p_series<R: Read>(reader: R) -> Result<Vec<(u32, f64)>, TransportError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TransportError::Csv(format!("missing column {name:?}")))
    };
    let (ti, pi) = (col("turn_index")?, col("P")?);
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let turn: u32 = field(ti)
            .parse()
            .map_err(|_| TransportError::Csv(format!("line {line}: bad turn_index {:?}", field(ti))))?;
        let p: f64 = field(pi)
            .parse()
            .map_err(|_| TransportError::Csv(format!("line {line}: bad P {:?}", field(pi))))?;
        if !p.is_finite() {
            return Err(TransportError::Csv(format!("line {line}: P is not finite")));
        }
        if out.last().is_some_and(|&(prev, _)| turn <= prev) {
            return Err(TransportError::Csv(format!("line {line}: turn_index not increasing")));
        }
        out.push((turn, p));
    }
    if out.is_empty() {
        return Err(TransportError::Csv("no data rows".into()));
    }
    Ok(out)
}

/// Renders the chart. The band is mean ± `band_k` standard deviations of P
/// over `window`.
pub fn render_svg(
    series: &[(u32, f64)],
    window: TurnRange,
    band_k: f64,
    injections: &[u32],
) -> Result<String, TransportError> {
    if series.is_empty() {
        return Err(TransportError::Csv("no data rows".into()));
    }
    let base: Vec<f64> = series
        .iter()
        .filter(|(t, _)| window.contains(*t))
        .map(|&(_, p)| p)
        .collect();
    if base.len() < 2 {
        return Err(TransportError::Invalid(format!(
            "baseline window {}-{} holds {} data rows, need 2",
            window.start,
            window.end,
            base.len()
        )));
    }
    let (m, sd) = (mean(&base), sample_std(&base));
    let (band_lo, band_hi) = (m - band_k * sd, m + band_k * sd);

    let t0 = series[0].0 as f64;
    let t1 = series[series.len() - 1].0 as f64;
    for &t in injections {
        if (t as f64) < t0 || (t as f64) > t1 {
            return Err(TransportError::Invalid(format!(
                "injection turn {t} outside the data range {t0}-{t1}"
            )));
        }
    }
    let ps = series.iter().map(|&(_, p)| p);
    let mut lo = ps.clone().fold(band_lo, f64::min);
    let mut hi = ps.fold(band_hi, f64::max);
    let pad = ((hi - lo) * 0.05).max(1e-6);
    lo -= pad;
    hi += pad;

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x = |t: f64| {
        if t1 > t0 {
            LEFT + (t - t0) / (t1 - t0) * plot_w
        } else {
            LEFT + plot_w / 2.0
        }
    };
    let y = |v: f64| TOP + (hi - v) / (hi - lo) * plot_h;
    let bottom = TOP + plot_h;

    let mut s = String::new();
    // writing to a String cannot fail
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="22" font-size="15" text-anchor="middle">Bipredictability P per turn</text>"#,
        WIDTH / 2.0
    );
    let _ = writeln!(
        s,
        r##"<rect class="baseline-band" x="{LEFT:.2}" y="{:.2}" width="{plot_w:.2}" height="{:.2}" fill="#4a7fb5" fill-opacity="0.18"/>"##,
        y(band_hi),
        (y(band_lo) - y(band_hi)).max(0.0)
    );
    let _ = writeln!(
        s,
        r##"<line class="baseline-mean" x1="{LEFT:.2}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#4a7fb5" stroke-width="1"/>"##,
        y(m),
        LEFT + plot_w
    );
    for &t in injections {
        let xt = x(t as f64);
        let _ = writeln!(
            s,
            r##"<line class="injection" x1="{xt:.2}" y1="{TOP:.2}" x2="{xt:.2}" y2="{bottom:.2}" stroke="#c0392b" stroke-width="1" stroke-dasharray="5 4"/>"##
        );
    }
    let points: Vec<String> = series
        .iter()
        .map(|&(t, p)| format!("{:.2},{:.2}", x(t as f64), y(p)))
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline class="p-series" fill="none" stroke="#222222" stroke-width="1.5" points="{}"/>"##,
        points.join(" ")
    );

    // axes and ticks
    let _ = writeln!(
        s,
        r##"<path d="M{LEFT:.2},{TOP:.2} V{bottom:.2} H{:.2}" fill="none" stroke="#555555"/>"##,
        LEFT + plot_w
    );
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            LEFT - 6.0,
            y(v) + 4.0
        );
    }
    let n_ticks = 5.min(series.len() - 1).max(1);
    for i in 0..=n_ticks {
        let t = (t0 + (t1 - t0) * i as f64 / n_ticks as f64).round();
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#,
            x(t),
            bottom + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">turn</text>"#,
        LEFT + plot_w / 2.0,
        bottom + 34.0
    );
    let _ = writeln!(
        s,
        r##"<text x="{:.2}" y="{:.2}" font-size="10" fill="#555555">baseline turns {}-{}: mean {m:.4}, band ±{band_k}σ [{band_lo:.4}, {band_hi:.4}]</text>"##,
        LEFT,
        bottom + 52.0,
        window.start,
        window.end
    );
    let _ = writeln!(
        s,
        r##"<text class="reference-note" x="{:.2}" y="{:.2}" font-size="10" fill="#555555">{}</text>"##,
        LEFT,
        bottom + 68.0,
        escape(REFERENCE_NOTE)
    );
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
