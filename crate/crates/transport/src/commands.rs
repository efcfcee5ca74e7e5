//! Library side of the `idt` subcommands.

use std::io::{BufRead, Write};

use idt_core::{DetectionReport, DetectorConfig, Metric, TokenizerSpec, TurnOutcome};
use idt_harness::{
    generate_conversation, run_experiment, summarize_table, ExperimentConfig, ExperimentSummary,
    GeneratorConfig, PerturbationKind, PerturbationPlan, SummaryTables, SyntheticConversation,
};

use crate::session::{replay_records, Session};
use crate::transcript::{parse_with, Payload, SequenceChecker, TranscriptRecord};
use crate::TransportError;

/// One replayed conversation.
#[derive(Debug)]
pub struct Analysis {
    pub session: Session,
    pub outcomes: Vec<TurnOutcome>,
}

fn pick(
    mut sessions: Vec<(Session, Vec<TurnOutcome>)>,
    conversation: Option<&str>,
) -> Result<Analysis, TransportError> {
    let index = match conversation {
        Some(id) => sessions
            .iter()
            .position(|(s, _)| s.state.id() == id)
            .ok_or_else(|| TransportError::Invalid(format!("no conversation {id:?} in transcript")))?,
        None => match sessions.len() {
            0 => return Err(TransportError::Invalid("transcript has no init record".into())),
            1 => 0,
            n => {
                return Err(TransportError::Invalid(format!(
                    "transcript holds {n} conversations; choose one with --conversation"
                )))
            }
        },
    };
    let (session, outcomes) = sessions.swap_remove(index);
    Ok(Analysis { session, outcomes })
}

/// Parses and replays a transcript.
pub fn analyze<R: BufRead>(
    reader: R,
    spec: TokenizerSpec,
    detector: &DetectorConfig,
    conversation: Option<&str>,
) -> Result<Analysis, TransportError> {
    let records = parse_with(reader, spec, SequenceChecker::new())?;
    pick(replay_records(&records, spec, detector)?, conversation)
}

/// Continues a restored conversation with the turn records in `reader`.
/// Records of other conversations are ignored.
pub fn resume<R: BufRead>(mut session: Session, reader: R) -> Result<Analysis, TransportError> {
    let id = session.state.id().to_string();
    let spec = session.tokenizer.spec();
    let mut checker = SequenceChecker::new();
    checker.resume(id.clone(), session.state.next_turn_index());
    let records = parse_with(reader, spec, checker)?;
    let mut outcomes = Vec::new();
    for r in records.iter().filter(|r| r.conversation_id() == id) {
        outcomes.push(session.apply(r)?);
    }
    Ok(Analysis { session, outcomes })
}

pub fn detect(
    analysis: &Analysis,
    injections: &[u32],
    alpha: f64,
    metrics: &[Metric],
) -> Result<DetectionReport, TransportError> {
    Ok(analysis.session.state.detect_phase(injections, alpha, metrics)?)
}

pub fn synthetic_records(conv: &SyntheticConversation) -> Vec<TranscriptRecord> {
    let id = conv.conversation_id.clone();
    let mut out = vec![TranscriptRecord::Init {
        conversation_id: id.clone(),
        prompt: Payload::Tokens(conv.initial_prompt.clone()),
    }];
    out.extend(conv.turns.iter().map(|t| TranscriptRecord::Turn {
        conversation_id: id.clone(),
        turn_index: t.index,
        response: Payload::Tokens(t.response.clone()),
        next_prompt: Payload::Tokens(t.next_prompt.clone()),
        external_scores: Default::default(),
    }));
    out
}

/// Writes a pre-tokenized synthetic transcript.
pub fn simulate<W: Write>(
    generator: &GeneratorConfig,
    n_turns: u32,
    plan: Option<&PerturbationPlan>,
    w: W,
) -> Result<SyntheticConversation, TransportError> {
    let conv = generate_conversation(generator, n_turns, plan)?;
    crate::transcript::write_transcript(w, &synthetic_records(&conv))?;
    Ok(conv)
}

/// Runs every perturbation kind plus unperturbed controls and tabulates them.
pub fn experiment(
    config: &ExperimentConfig,
    seeds: usize,
    controls: usize,
) -> Result<(Vec<ExperimentSummary>, SummaryTables), TransportError> {
    let mut summaries = Vec::new();
    for kind in PerturbationKind::ALL {
        summaries.push(run_experiment(config, Some(&PerturbationPlan::new(kind)), seeds)?);
    }
    if controls > 0 {
        summaries.push(run_experiment(config, None, controls)?);
    }
    let tables = summarize_table(&summaries);
    Ok((summaries, tables))
}
