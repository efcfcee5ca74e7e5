use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use idt_core::{Metric, TokenizerMode, TurnRange};
use idt_harness::{ExperimentConfig, PerturbationKind, PerturbationPlan, DEFAULT_INJECTION_TURNS};
use idt_transport::commands::{self, Analysis};
use idt_transport::output::{detection_text, write_detection_csv, write_metrics_csv};
use idt_transport::report::{read_p_series, render_svg};
use idt_transport::service::{self, AppState};
use idt_transport::{load_state, save_state, AppConfig, TransportError};

#[derive(Parser)]
#[command(name = "idt", version, about = "Token-statistics coupling monitor for multi-turn conversations")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML settings file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    tokenizer: Option<Mode>,
    /// Lowercase words (whitespace tokenizer)
    #[arg(long, global = true)]
    lowercase: bool,
    /// Baseline window, e.g. 1-30
    #[arg(long, global = true, value_parser = parse_window)]
    window: Option<TurnRange>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long = "z-threshold", global = true)]
    z_threshold: Option<f64>,
    /// Generator seed
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Pretokenized,
    Whitespace,
    Byte,
}

#[derive(Subcommand)]
enum Command {
    /// Per-turn metrics CSV for a transcript
    Analyze {
        transcript: PathBuf,
        #[arg(long)]
        conversation: Option<String>,
        /// Output file (stdout if omitted)
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Write a snapshot after the last turn
        #[arg(long)]
        save_state: Option<PathBuf>,
        /// Continue from a snapshot; the transcript then holds later turns only
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Phase comparison of baseline turns against injection turns
    Detect {
        transcript: PathBuf,
        #[arg(long)]
        conversation: Option<String>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_INJECTION_TURNS)]
        injections: Vec<u32>,
        #[arg(long, value_delimiter = ',', value_parser = parse_metric)]
        metrics: Vec<Metric>,
        /// Also write the machine-readable table here
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write a synthetic pre-tokenized transcript
    Simulate {
        #[arg(long, short)]
        out: PathBuf,
        /// Perturbation kind; omit for an unperturbed conversation
        #[arg(long, value_parser = parse_kind)]
        kind: Option<PerturbationKind>,
        #[arg(long, default_value_t = 100)]
        turns: u32,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_INJECTION_TURNS)]
        injections: Vec<u32>,
    },
    /// SVG chart of P from an analyze CSV
    Report {
        metrics: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        injections: Vec<u32>,
    },
    /// Run the HTTP service
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
    /// Synthetic detection experiment over all perturbation kinds
    Experiment {
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        /// Unperturbed control runs
        #[arg(long, default_value_t = 20)]
        controls: usize,
        #[arg(long, default_value_t = 100)]
        turns: u32,
        /// Write the detection table as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn parse_window(s: &str) -> Result<TurnRange, String> {
    let (a, b) = s
        .split_once('-')
        .ok_or_else(|| format!("expected START-END, got {s:?}"))?;
    let start: u32 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let end: u32 = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    if start == 0 || end < start {
        return Err(format!("window {s:?} must satisfy 1 <= START <= END"));
    }
    Ok(TurnRange::new(start, end))
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse()
}

fn parse_kind(s: &str) -> Result<PerturbationKind, String> {
    s.parse()
}

fn settings(g: &Global) -> Result<AppConfig, TransportError> {
    let mut cfg = match &g.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(mode) = g.tokenizer {
        cfg.tokenizer.mode = match mode {
            Mode::Pretokenized => TokenizerMode::Pretokenized,
            Mode::Whitespace => TokenizerMode::Whitespace,
            Mode::Byte => TokenizerMode::Byte,
        };
    }
    cfg.tokenizer.lowercase |= g.lowercase;
    if let Some(w) = g.window {
        cfg.detector.baseline_window = w;
    }
    if let Some(a) = g.alpha {
        if !(a > 0.0 && a < 1.0) {
            return Err(TransportError::Config(format!("alpha {a} outside (0, 1)")));
        }
        cfg.detector.alpha = a;
    }
    if let Some(z) = g.z_threshold {
        cfg.detector.z_threshold = z;
    }
    if let Some(s) = g.seed {
        cfg.generator.seed = s;
    }
    Ok(cfg)
}

fn reader(path: &Path) -> Result<BufReader<File>, TransportError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| TransportError::Invalid(format!("{}: {e}", path.display())))
}

fn writer(path: &Path) -> Result<BufWriter<File>, TransportError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| TransportError::Invalid(format!("{}: {e}", path.display())))
}

fn load_analysis(
    cfg: &AppConfig,
    transcript: &Path,
    conversation: Option<&str>,
    resume: Option<&Path>,
) -> Result<Analysis, TransportError> {
    match resume {
        Some(snap) => commands::resume(load_state(reader(snap)?)?, reader(transcript)?),
        None => commands::analyze(reader(transcript)?, cfg.tokenizer, &cfg.detector, conversation),
    }
}

fn run(cli: Cli) -> Result<(), TransportError> {
    let cfg = settings(&cli.global)?;
    match cli.command {
        Command::Analyze {
            transcript,
            conversation,
            out,
            save_state: snapshot,
            resume,
        } => {
            let analysis = load_analysis(&cfg, &transcript, conversation.as_deref(), resume.as_deref())?;
            match out {
                Some(path) => write_metrics_csv(writer(&path)?, &analysis.outcomes)?,
                None => write_metrics_csv(io::stdout().lock(), &analysis.outcomes)?,
            }
            if let Some(path) = snapshot {
                save_state(&analysis.session, writer(&path)?)?;
            }
        }
        Command::Detect {
            transcript,
            conversation,
            injections,
            metrics,
            csv,
        } => {
            let analysis = load_analysis(&cfg, &transcript, conversation.as_deref(), None)?;
            let metrics = if metrics.is_empty() {
                cfg.detector.monitored.clone()
            } else {
                metrics
            };
            let report = commands::detect(&analysis, &injections, cfg.detector.alpha, &metrics)?;
            print!("{}", detection_text(&report));
            if let Some(path) = csv {
                write_detection_csv(writer(&path)?, &report)?;
            }
        }
        Command::Simulate {
            out,
            kind,
            turns,
            injections,
        } => {
            let plan = kind.map(|k| PerturbationPlan {
                injection_turns: injections,
                ..PerturbationPlan::new(k)
            });
            let mut w = writer(&out)?;
            commands::simulate(&cfg.generator, turns, plan.as_ref(), &mut w)?;
            w.flush()?;
        }
        Command::Report {
            metrics,
            out,
            injections,
        } => {
            let series = read_p_series(reader(&metrics)?)?;
            let svg = render_svg(
                &series,
                cfg.detector.baseline_window,
                cfg.detector.band_k,
                &injections,
            )?;
            let mut w = writer(&out)?;
            w.write_all(svg.as_bytes())?;
            w.flush()?;
        }
        Command::Serve { bind } => {
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(service::serve(&bind, AppState::new(cfg.tokenizer, cfg.detector)))?;
        }
        Command::Experiment {
            seeds,
            controls,
            turns,
            csv,
        } => {
            let config = ExperimentConfig {
                generator: cfg.generator,
                detector: cfg.detector,
                n_turns: turns,
                ..ExperimentConfig::default()
            };
            let (_, tables) = commands::experiment(&config, seeds, controls)?;
            print!("{}", tables.to_text());
            if let Some(path) = csv {
                let mut w = writer(&path)?;
                w.write_all(tables.detection.to_csv().as_bytes())?;
                w.flush()?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("idt: {e}");
            ExitCode::FAILURE
        }
    }
}
