//! End-to-end acceptance checks. Prints one PASS/FAIL line per check and
//! exits nonzero if any fails.

use std::collections::HashMap;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use idt_core::stats::{cohens_d, student_t_sf, welch_t_test};
use idt_core::{
    compute_turn_metrics, ConversationState, DetectorConfig, EntropyAccumulator, Metric, TokenBag,
    TokenId, TokenizerSpec, TurnMetrics, TurnRange,
};
use idt_harness::{
    run_experiment, summarize_table, ExperimentConfig, PerturbationKind, PerturbationPlan,
};
use idt_transport::commands::synthetic_records;
use idt_transport::output::flags_cell;
use idt_transport::report::render_svg;
use idt_transport::service::{router, AppState, TurnResponse};
use idt_transport::{load_state, save_state, Session, TranscriptRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed < limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.2?}, limit {limit:?}"))
    }
}

/// Entropy in bits from raw token ids.
fn naive_entropy(tokens: &[u32]) -> f64 {
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for &t in tokens {
        *counts.entry(t).or_default() += 1;
    }
    let n = tokens.len() as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

fn ids(v: &[u32]) -> Vec<TokenId> {
    v.iter().map(|&x| TokenId(x)).collect()
}

fn random_tokens(rng: &mut ChaCha8Rng, vocab: u32, max_len: usize) -> Vec<u32> {
    let len = rng.random_range(0..=max_len);
    (0..len).map(|_| rng.random_range(0..vocab)).collect()
}

fn metric_identities() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let vocab = rng.random_range(1..=500);
        let s = random_tokens(&mut rng, vocab, 5000);
        let a = random_tokens(&mut rng, vocab, 5000);
        let sp = random_tokens(&mut rng, vocab, 5000);
        let bag = |v: &[u32]| TokenBag::from_tokens(&ids(v));
        let m = compute_turn_metrics(&bag(&s), &bag(&a), &bag(&sp), 1);

        let sa: Vec<u32> = s.iter().chain(&a).copied().collect();
        let sasp: Vec<u32> = sa.iter().chain(&sp).copied().collect();
        let (h_sa, h_sp, h_sasp) = (naive_entropy(&sa), naive_entropy(&sp), naive_entropy(&sasp));
        let errs = [
            m.mi - (m.h_sa + m.h_sp - m.h_sasp),
            m.hf + m.h_sa - m.h_sasp,
            m.hb + m.h_sp - m.h_sasp,
            m.delta_h - (m.h_sp - m.h_sa),
            m.mi - (h_sa + h_sp - h_sasp),
            m.hf - (h_sasp - h_sa),
            m.hb - (h_sasp - h_sp),
            m.delta_h - (h_sp - h_sa),
        ];
        worst = errs.iter().fold(worst, |w, e| w.max(e.abs()));
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    check(
        worst <= 1e-9,
        format!("1000 triples, max error {worst:.2e} bits, {:.2?}", start.elapsed()),
    )
}

fn accumulator_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let vocab = rng.random_range(1..=500);
        let total = rng.random_range(0..=5000usize);
        let mut acc = EntropyAccumulator::new();
        let mut all = Vec::with_capacity(total);
        while all.len() < total {
            let chunk = rng.random_range(1..=total - all.len()).min(400);
            let tokens: Vec<u32> = (0..chunk).map(|_| rng.random_range(0..vocab)).collect();
            acc.extend(&ids(&tokens));
            all.extend(tokens);
            worst = worst.max((acc.entropy() - naive_entropy(&all)).abs());
        }
        if acc.update_count() != all.len() as u64 {
            return Err(format!("update count {} for {} tokens", acc.update_count(), all.len()));
        }
        worst = worst.max((acc.entropy() - naive_entropy(&all)).abs());
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    check(
        worst <= 1e-9,
        format!("1000 sequences, max error {worst:.2e} bits, {:.2?}", start.elapsed()),
    )
}

fn micro_example() -> Outcome {
    // a=0 b=1 c=2
    let (s, a, sp) = ([0u32, 1], [1u32, 2], [0u32, 2]);
    let sa: Vec<u32> = s.iter().chain(&a).copied().collect();
    let sasp: Vec<u32> = sa.iter().chain(&sp).copied().collect();
    let (hs, ha, hsp) = (naive_entropy(&s), naive_entropy(&a), naive_entropy(&sp));
    let (hsa, hsasp) = (naive_entropy(&sa), naive_entropy(&sasp));
    let oracle = [
        (hsa + hsp - hsasp) / (hs + ha + hsp),
        hsasp - hsa,
        hsasp - hsp,
        (hsasp - hsa) - (hsasp - hsp),
    ];
    let frozen = [0.305012, 0.084963, 0.584963, -0.5];
    let m = compute_turn_metrics(
        &TokenBag::from_tokens(&ids(&s)),
        &TokenBag::from_tokens(&ids(&a)),
        &TokenBag::from_tokens(&ids(&sp)),
        1,
    );
    let got = [m.p, m.hf, m.hb, m.delta_h];
    let mut ok = true;
    for i in 0..4 {
        ok &= (oracle[i] - frozen[i]).abs() < 1e-5 && (got[i] - frozen[i]).abs() < 1e-5;
    }
    check(
        ok,
        format!(
            "P {:.6} Hf {:.6} Hb {:.6} dH {:.6}",
            got[0], got[1], got[2], got[3]
        ),
    )
}

/// Upper tail of Student's t by Simpson quadrature after x = √ν·tan θ,
/// normalized by the same quadrature over the whole line.
fn sf_quadrature(t: f64, df: f64) -> f64 {
    let f = |theta: f64| theta.cos().powf(df - 1.0);
    let simpson = |a: f64, b: f64| {
        let n = 20_000;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let half = std::f64::consts::FRAC_PI_2;
    simpson((t / df.sqrt()).atan(), half) / simpson(-half, half)
}

fn statistics_kernel() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (t, df) in [(1.0, 1.0), (2.0, 10.0), (3.674, 4.0)] {
        let got = student_t_sf(t, df).map_err(|e| e.to_string())?;
        let want = sf_quadrature(t, df);
        ok &= (got - want).abs() < 1e-3;
        notes.push(format!("sf({t},{df})={got:.5}/{want:.5}"));
    }
    let w = welch_t_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).map_err(|e| e.to_string())?;
    let d = cohens_d(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).map_err(|e| e.to_string())?;
    ok &= (w.t + 3.6742).abs() < 1e-3
        && w.df == 4.0
        && (w.p_two_sided - 0.0213).abs() < 5e-4
        && d.cohens_d == 3.0;
    notes.push(format!(
        "welch t={:.4} df={} p={:.4} d={}",
        w.t, w.df, w.p_two_sided, d.cohens_d
    ));
    check(ok, notes.join(", "))
}

fn detection_sensitivity() -> Outcome {
    let start = Instant::now();
    let config = ExperimentConfig::default();
    let mut summaries = Vec::new();
    for kind in PerturbationKind::ALL {
        summaries.push(
            run_experiment(&config, Some(&PerturbationPlan::new(kind)), 3)
                .map_err(|e| e.to_string())?,
        );
    }
    let sum = |m: Option<Metric>| -> usize {
        summaries
            .iter()
            .map(|s| m.map_or(s.detections.union, |m| s.detections.get(m)))
            .sum()
    };
    let (p, hf, hb, dh, union) = (
        sum(Some(Metric::P)),
        sum(Some(Metric::Hf)),
        sum(Some(Metric::Hb)),
        sum(Some(Metric::DeltaH)),
        sum(None),
    );
    within(start.elapsed(), Duration::from_secs(120))?;
    check(
        p == 9 && hb == 9 && dh == 9 && union == 9 && hb >= hf,
        format!(
            "P {p}/9 Hb {hb}/9 dH {dh}/9 union {union}/9 Hf {hf}/9, {:.2?}",
            start.elapsed()
        ),
    )
}

fn false_positive_calibration() -> Outcome {
    let start = Instant::now();
    let control = run_experiment(&ExperimentConfig::default(), None, 20).map_err(|e| e.to_string())?;
    within(start.elapsed(), Duration::from_secs(180))?;
    let rates: Vec<(Metric, f64)> = Metric::ALL
        .iter()
        .map(|&m| (m, control.false_positive_rate(m).unwrap_or(f64::NAN)))
        .collect();
    let detail = rates
        .iter()
        .map(|(m, r)| format!("{m} {r:.2}"))
        .collect::<Vec<_>>()
        .join(" ");
    check(
        rates.iter().all(|&(_, r)| r <= 0.10),
        format!("20 controls, rates {detail} (limit 0.10), {:.2?}", start.elapsed()),
    )
}

fn history_from(values: &[f64]) -> Vec<TurnMetrics> {
    values
        .iter()
        .enumerate()
        .map(|(i, &p)| TurnMetrics {
            turn_index: i as u32 + 1,
            h_s: 0.0,
            h_a: 0.0,
            h_sp: 0.0,
            h_sa: 0.0,
            h_sasp: 0.0,
            mi: 0.0,
            p,
            hf: 0.0,
            hb: 0.0,
            delta_h: 0.0,
            token_counts: [0; 3],
        })
        .collect()
}

fn trend_flagged(slope: f64, seed: u64) -> Result<bool, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let values: Vec<f64> = (1..=200)
        .map(|t| 0.28 + slope * t as f64 + noise.sample(&mut rng))
        .collect();
    let state = ConversationState::from_parts(
        "trend".into(),
        DetectorConfig::default(),
        EntropyAccumulator::new(),
        history_from(&values),
        None,
        Vec::new(),
    )
    .map_err(|e| e.to_string())?;
    let out = state
        .detect_trend(Metric::P, TurnRange::new(1, 200), 0.05)
        .map_err(|e| e.to_string())?;
    Ok(out.flagged)
}

fn trend_sensitivity() -> Outcome {
    let mut drift = 0;
    let mut flat = 0;
    for seed in 0..10 {
        drift += trend_flagged(-0.0005, seed)? as usize;
        flat += trend_flagged(0.0, 100 + seed)? as usize;
    }
    check(
        drift >= 9 && flat <= 1,
        format!("drift flagged {drift}/10, flat flagged {flat}/10"),
    )
}

fn performance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let turns: Vec<(Vec<TokenId>, Vec<TokenId>)> = (0..200)
        .map(|_| {
            let mut draw = |n: usize| -> Vec<TokenId> {
                (0..n).map(|_| TokenId(rng.random_range(0..20_000))).collect()
            };
            (draw(300), draw(220))
        })
        .collect();
    let prompt: Vec<TokenId> = (0..100).map(|i| TokenId(i % 50)).collect();

    let start = Instant::now();
    let mut state = ConversationState::new("perf", &prompt, DetectorConfig::default());
    for (a, sp) in &turns {
        let before = state.context().update_count();
        state.process_turn(a, sp);
        let updates = state.context().update_count() - before;
        if updates != (a.len() + sp.len()) as u64 {
            return Err(format!("turn {}: {updates} count updates", state.turn_count()));
        }
    }
    let elapsed = start.elapsed();
    let total = state.context().total();
    within(elapsed, Duration::from_secs(1))?;
    check(
        total >= 100_000,
        format!("200 turns, {total} context tokens, {elapsed:.2?}, updates = |A|+|S'| on every turn"),
    )
}

async fn post(app: &axum::Router, uri: &str, body: String) -> Result<(StatusCode, String), String> {
    use tower::ServiceExt;
    let req = Request::builder()
        .method("POST")
        .uri(uri)
        .body(Body::from(body))
        .map_err(|e| e.to_string())?;
    let resp = app.clone().oneshot(req).await.map_err(|e| e.to_string())?;
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX)
        .await
        .map_err(|e| e.to_string())?;
    Ok((status, String::from_utf8_lossy(&bytes).into_owned()))
}

fn metric_bits(m: &TurnMetrics) -> [u64; 10] {
    [m.h_s, m.h_a, m.h_sp, m.h_sa, m.h_sasp, m.mi, m.p, m.hf, m.hb, m.delta_h].map(f64::to_bits)
}

fn replay_and_persistence() -> Outcome {
    let config = ExperimentConfig::default();
    let plan = PerturbationPlan::new(PerturbationKind::Contradiction);
    let conv = idt_harness::generate_conversation(&config.generator.with_seed(21), 100, Some(&plan))
        .map_err(|e| e.to_string())?;
    let records = synthetic_records(&conv);

    // CLI
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("t.jsonl");
    let text: String = records.iter().map(|r| r.to_json() + "\n").collect();
    std::fs::write(&path, text).map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_idt"))
        .arg("analyze")
        .arg(&path)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    let cli_rows: Vec<Vec<String>> = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;

    // service
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let served: Vec<TurnResponse> = runtime.block_on(async {
        let app = router(AppState::new(TokenizerSpec::default(), DetectorConfig::default()));
        let (s, body) = post(&app, "/v1/conversations", records[0].to_json()).await?;
        if s != StatusCode::CREATED {
            return Err(format!("init: {s} {body}"));
        }
        let mut out = Vec::new();
        for r in &records[1..] {
            let uri = format!("/v1/conversations/{}/turns", r.conversation_id());
            let (s, body) = post(&app, &uri, r.to_json()).await?;
            if s != StatusCode::OK {
                return Err(format!("turn: {s} {body}"));
            }
            out.push(serde_json::from_str(&body).map_err(|e| e.to_string())?);
        }
        Ok(out)
    })?;

    if cli_rows.len() != 100 || served.len() != 100 {
        return Err(format!("{} CLI rows, {} service responses", cli_rows.len(), served.len()));
    }
    for (row, resp) in cli_rows.iter().zip(&served) {
        let m = &resp.metrics;
        let parsed: Vec<u64> = row[1..11]
            .iter()
            .map(|c| c.parse::<f64>().map(f64::to_bits))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        if row[0] != m.turn_index.to_string()
            || parsed != metric_bits(m)
            || row[11] != flags_cell(&resp.new_flags)
        {
            return Err(format!("turn {} differs between CLI and service", m.turn_index));
        }
    }

    // snapshot at turn 50, continue to 100
    let mut first = Session::from_init(&records[0], TokenizerSpec::default(), DetectorConfig::default())
        .map_err(|e| e.to_string())?;
    for r in &records[1..=50] {
        first.apply(r).map_err(|e| e.to_string())?;
    }
    let mut buf = Vec::new();
    save_state(&first, &mut buf).map_err(|e| e.to_string())?;
    let mut resumed = load_state(buf.as_slice()).map_err(|e| e.to_string())?;
    for (r, resp) in records[51..].iter().zip(&served[50..]) {
        let o = resumed.apply(r).map_err(|e| e.to_string())?;
        if metric_bits(&o.metrics) != metric_bits(&resp.metrics) || o.new_flags != resp.new_flags {
            return Err(format!("resumed turn {} differs", o.metrics.turn_index));
        }
    }
    let TranscriptRecord::Turn { .. } = &records[100] else {
        return Err("transcript shape".into());
    };
    Ok("100 turns: CLI CSV and service responses bit-identical; resume after turn 50 bit-identical".into())
}

fn reference_note() -> Outcome {
    let series: Vec<(u32, f64)> = (1..=40).map(|t| (t, 0.3 + 0.001 * (t % 3) as f64)).collect();
    let svg = render_svg(&series, TurnRange::new(1, 30), 2.0, &[35]).map_err(|e| e.to_string())?;
    let summary = run_experiment(&ExperimentConfig::default(), None, 1).map_err(|e| e.to_string())?;
    let tables = summarize_table(&[summary]).to_text();
    let needles = ["0.275 ± 0.029", "85%", "44%"];
    let ok = needles.iter().all(|n| svg.contains(n) && tables.contains(n));
    check(
        ok,
        "reference baseline and correlation split shown in chart and tables, not reproduced".into(),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("metric identity suite", metric_identities),
        ("incremental entropy vs naive recount", accumulator_equivalence),
        ("three-token micro example", micro_example),
        ("statistics kernel accuracy", statistics_kernel),
        ("synthetic detection sensitivity", detection_sensitivity),
        ("false-positive calibration", false_positive_calibration),
        ("trend sensitivity", trend_sensitivity),
        ("linear-cost turn processing", performance),
        ("replay and persistence", replay_and_persistence),
        ("reference values documented", reference_note),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS {:>2}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2}. {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} acceptance checks passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
