//! Conversation snapshots.
//!
//! A snapshot is two JSON lines: a header carrying the format version and
//! the SHA-256 of the payload line, then the payload itself. The payload
//! stores the raw context counts, total and running `Σ c·log₂c`, so a
//! restored conversation continues with bit-identical metrics.

use std::io::{BufRead, Write};

use idt_core::{
    BaselineModel, ConversationState, DetectorConfig, DeviationFlag, EntropyAccumulator, TokenId,
    Tokenizer, TokenizerSpec, TurnMetrics,
};
use idt_harness::ExternalScores;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::session::Session;
use crate::TransportError;

pub const SNAPSHOT_FORMAT: &str = "idt-state";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextCounts {
    /// Sorted by token id.
    pub counts: Vec<(TokenId, u64)>,
    pub total: u64,
    pub clogc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub conversation_id: String,
    pub tokenizer: TokenizerSpec,
    /// Whitespace intern table in id order.
    pub vocab: Vec<String>,
    pub detector: DetectorConfig,
    pub context: ContextCounts,
    pub turn_count: u32,
    pub history: Vec<TurnMetrics>,
    pub baseline: Option<BaselineModel>,
    pub flags: Vec<DeviationFlag>,
    #[serde(default)]
    pub external_scores: ExternalScores,
}

impl StateSnapshot {
    pub fn capture(session: &Session) -> Self {
        let state = &session.state;
        let ctx = state.context();
        Self {
            conversation_id: state.id().to_string(),
            tokenizer: session.tokenizer.spec(),
            vocab: session.tokenizer.vocab().to_vec(),
            detector: state.config().clone(),
            context: ContextCounts {
                counts: ctx.sorted_counts(),
                total: ctx.total(),
                clogc: ctx.clogc(),
            },
            turn_count: state.turn_count(),
            history: state.history().to_vec(),
            baseline: state.baseline().cloned(),
            flags: state.flags().to_vec(),
            external_scores: session.scores.clone(),
        }
    }

    pub fn restore(self) -> Result<Session, TransportError> {
        if self.turn_count as usize != self.history.len() {
            return Err(TransportError::Corrupt(format!(
                "turn_count {} but {} history entries",
                self.turn_count,
                self.history.len()
            )));
        }
        let context =
            EntropyAccumulator::from_parts(self.context.counts, self.context.total, self.context.clogc)?;
        let state = ConversationState::from_parts(
            self.conversation_id,
            self.detector,
            context,
            self.history,
            self.baseline,
            self.flags,
        )?;
        self.external_scores
            .validate(state.turn_count())
            .map_err(|e| TransportError::Corrupt(e.to_string()))?;
        Ok(Session {
            tokenizer: Tokenizer::with_vocab(self.tokenizer, self.vocab)?,
            state,
            scores: self.external_scores,
        })
    }
}

pub fn save_state<W: Write>(session: &Session, mut w: W) -> Result<(), TransportError> {
    let payload = serde_json::to_string(&StateSnapshot::capture(session))?;
    let header = Header {
        format: SNAPSHOT_FORMAT.into(),
        version: SNAPSHOT_VERSION,
        sha256: hex::encode(Sha256::digest(payload.as_bytes())),
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    writeln!(w, "{payload}")?;
    w.flush()?;
    Ok(())
}

pub fn load_state<R: BufRead>(reader: R) -> Result<Session, TransportError> {
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .transpose()?
        .ok_or_else(|| TransportError::Corrupt("empty snapshot".into()))?;
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|e| TransportError::Corrupt(format!("bad header: {e}")))?;
    if header.format != SNAPSHOT_FORMAT {
        return Err(TransportError::Corrupt(format!(
            "not a snapshot (format {:?})",
            header.format
        )));
    }
    if header.version != SNAPSHOT_VERSION {
        return Err(TransportError::VersionMismatch {
            found: header.version,
            expected: SNAPSHOT_VERSION,
        });
    }
    let payload = lines.next().transpose()?.unwrap_or_default();
    if hex::encode(Sha256::digest(payload.as_bytes())) != header.sha256 {
        return Err(TransportError::Checksum);
    }
    let snapshot: StateSnapshot = serde_json::from_str(&payload)
        .map_err(|e| TransportError::Corrupt(format!("bad payload: {e}")))?;
    snapshot.restore()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transcript::Payload;

    fn session() -> Session {
        let mut s = Session::start(
            "c",
            &Payload::Text("the cat sat".into()),
            TokenizerSpec::whitespace(),
            DetectorConfig::default(),
        )
        .unwrap();
        for t in 1..=35u32 {
            let rec = crate::transcript::TranscriptRecord::Turn {
                conversation_id: "c".into(),
                turn_index: t,
                response: Payload::Text(format!("w{} w{} the cat", t % 7, t % 3)),
                next_prompt: Payload::Text(format!("q{} sat", t % 5)),
                external_scores: [("judge".to_string(), t as f64 / 10.0)].into(),
            };
            s.apply(&rec).unwrap();
        }
        s
    }

    fn saved(s: &Session) -> Vec<u8> {
        let mut buf = Vec::new();
        save_state(s, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_preserves_everything() {
        let s = session();
        let back = load_state(saved(&s).as_slice()).unwrap();
        assert_eq!(StateSnapshot::capture(&back), StateSnapshot::capture(&s));
        assert_eq!(back.state.context().clogc().to_bits(), s.state.context().clogc().to_bits());
    }

    #[test]
    fn wrong_version() {
        let text = String::from_utf8(saved(&session())).unwrap();
        let bumped = text.replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(
            load_state(bumped.as_bytes()),
            Err(TransportError::VersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn truncated_or_edited_payload() {
        let buf = saved(&session());
        let cut = &buf[..buf.len() * 2 / 3];
        assert!(matches!(load_state(cut), Err(TransportError::Checksum)));

        let text = String::from_utf8(buf).unwrap();
        let header_only = text.lines().next().unwrap();
        assert!(matches!(load_state(header_only.as_bytes()), Err(TransportError::Checksum)));

        let edited = text.replacen("\"total\":", "\"total\":1", 1);
        assert!(matches!(load_state(edited.as_bytes()), Err(TransportError::Checksum)));
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(matches!(load_state(&b""[..]), Err(TransportError::Corrupt(_))));
        assert!(matches!(load_state(&b"hello\n"[..]), Err(TransportError::Corrupt(_))));
    }
}
