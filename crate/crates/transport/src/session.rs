use idt_core::{ConversationState, DetectorConfig, IdtError, TokenId, Tokenizer, TokenizerSpec, TurnOutcome};
use idt_harness::ExternalScores;

use crate::transcript::{Payload, TranscriptRecord};
use crate::TransportError;

/// A monitored conversation together with its tokenizer and any external
/// per-turn scores seen so far.
#[derive(Clone, Debug)]
pub struct Session {
    pub state: ConversationState,
    pub tokenizer: Tokenizer,
    pub scores: ExternalScores,
}

impl Session {
    pub fn start(
        id: &str,
        prompt: &Payload,
        spec: TokenizerSpec,
        detector: DetectorConfig,
    ) -> Result<Self, TransportError> {
        let mut tokenizer = Tokenizer::new(spec);
        let prompt = resolve(&mut tokenizer, prompt)?;
        Ok(Self {
            state: ConversationState::new(id, &prompt, detector),
            tokenizer,
            scores: ExternalScores::new(),
        })
    }

    /// Opens a session from an init record.
    pub fn from_init(
        record: &TranscriptRecord,
        spec: TokenizerSpec,
        detector: DetectorConfig,
    ) -> Result<Self, TransportError> {
        match record {
            TranscriptRecord::Init {
                conversation_id,
                prompt,
            } => Self::start(conversation_id, prompt, spec, detector),
            TranscriptRecord::Turn { .. } => Err(TransportError::Invalid(
                "expected an init record".into(),
            )),
        }
    }

    /// Applies a turn record. Nothing changes if the record is rejected.
    pub fn apply(&mut self, record: &TranscriptRecord) -> Result<TurnOutcome, TransportError> {
        let TranscriptRecord::Turn {
            conversation_id,
            turn_index,
            response,
            next_prompt,
            external_scores,
        } = record
        else {
            return Err(TransportError::Invalid("expected a turn record".into()));
        };
        if conversation_id != self.state.id() {
            return Err(TransportError::Invalid(format!(
                "record for conversation {conversation_id:?} sent to {:?}",
                self.state.id()
            )));
        }
        let expected = self.state.next_turn_index();
        if *turn_index != expected {
            return Err(IdtError::OutOfOrderTurn {
                expected,
                got: *turn_index,
            }
            .into());
        }
        // tokenize on a copy so a failure leaves the intern table untouched
        let mut tokenizer = self.tokenizer.clone();
        let a = resolve(&mut tokenizer, response)?;
        let sp = resolve(&mut tokenizer, next_prompt)?;
        let outcome = self.state.process_turn_at(*turn_index, &a, &sp)?;
        self.tokenizer = tokenizer;
        for (name, &v) in external_scores {
            self.scores.insert(name.clone(), *turn_index, v);
        }
        Ok(outcome)
    }
}

fn resolve(tokenizer: &mut Tokenizer, p: &Payload) -> Result<Vec<TokenId>, TransportError> {
    match p {
        Payload::Tokens(t) => Ok(t.clone()),
        Payload::Text(text) => Ok(tokenizer.tokenize(text)?),
    }
}

/// Replays parsed records, one session per conversation, in first-seen order.
pub fn replay_records(
    records: &[TranscriptRecord],
    spec: TokenizerSpec,
    detector: &DetectorConfig,
) -> Result<Vec<(Session, Vec<TurnOutcome>)>, TransportError> {
    let mut sessions: Vec<(Session, Vec<TurnOutcome>)> = Vec::new();
    for record in records {
        match record {
            TranscriptRecord::Init { .. } => {
                sessions.push((Session::from_init(record, spec, detector.clone())?, Vec::new()));
            }
            TranscriptRecord::Turn {
                conversation_id, ..
            } => {
                let (session, outcomes) = sessions
                    .iter_mut()
                    .find(|(s, _)| s.state.id() == conversation_id)
                    .ok_or_else(|| IdtError::UnknownConversation(conversation_id.clone()))?;
                outcomes.push(session.apply(record)?);
            }
        }
    }
    Ok(sessions)
}
