//! Line-delimited JSON transcripts.
//!
//! Each line is one record. A conversation opens with an `init` record and
//! continues with `turn` records numbered 1, 2, ... Text fields and
//! token-id fields are alternatives: `prompt` or `prompt_tokens`,
//! `response` or `response_tokens`, `next_prompt` or `next_prompt_tokens`.
//!
//! ```text
//! {"kind":"init","conversation_id":"c1","prompt_tokens":[4,8,15]}
//! {"kind":"turn","conversation_id":"c1","turn_index":1,"response_tokens":[16,23],"next_prompt_tokens":[42]}
//! ```

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use idt_core::{TokenId, TokenizerMode, TokenizerSpec};
use serde::{Deserialize, Serialize};

use crate::TransportError;

/// A field given either as text or as token ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    Text(String),
    Tokens(Vec<TokenId>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum TranscriptRecord {
    Init {
        conversation_id: String,
        prompt: Payload,
    },
    Turn {
        conversation_id: String,
        turn_index: u32,
        response: Payload,
        next_prompt: Payload,
        external_scores: BTreeMap<String, f64>,
    },
}

impl TranscriptRecord {
    pub fn conversation_id(&self) -> &str {
        match self {
            TranscriptRecord::Init { conversation_id, .. }
            | TranscriptRecord::Turn { conversation_id, .. } => conversation_id,
        }
    }

    /// Single-line JSON form.
    pub fn to_json(&self) -> String {
        let raw = match self.clone() {
            TranscriptRecord::Init {
                conversation_id,
                prompt,
            } => {
                let (prompt, prompt_tokens) = split(prompt);
                RawRecord::Init {
                    conversation_id: Some(conversation_id),
                    prompt,
                    prompt_tokens,
                }
            }
            TranscriptRecord::Turn {
                conversation_id,
                turn_index,
                response,
                next_prompt,
                external_scores,
            } => {
                let (response, response_tokens) = split(response);
                let (next_prompt, next_prompt_tokens) = split(next_prompt);
                RawRecord::Turn {
                    conversation_id: Some(conversation_id),
                    turn_index: Some(turn_index),
                    response,
                    response_tokens,
                    next_prompt,
                    next_prompt_tokens,
                    external_scores,
                }
            }
        };
        serde_json::to_string(&raw).expect("records serialize")
    }
}

fn split(p: Payload) -> (Option<String>, Option<Vec<TokenId>>) {
    match p {
        Payload::Text(t) => (Some(t), None),
        Payload::Tokens(t) => (None, Some(t)),
    }
}

/// Wire shape before validation.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawRecord {
    Init {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        conversation_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prompt: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prompt_tokens: Option<Vec<TokenId>>,
    },
    Turn {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        conversation_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        turn_index: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        response: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        response_tokens: Option<Vec<TokenId>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        next_prompt: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        next_prompt_tokens: Option<Vec<TokenId>>,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        external_scores: BTreeMap<String, f64>,
    },
}

fn payload(
    field: &str,
    text: Option<String>,
    tokens: Option<Vec<TokenId>>,
    spec: TokenizerSpec,
) -> Result<Payload, String> {
    let p = match (text, tokens) {
        (Some(_), Some(_)) => {
            return Err(format!("both {field:?} and \"{field}_tokens\" are present"))
        }
        (None, None) => return Err(format!("neither {field:?} nor \"{field}_tokens\" is present")),
        (Some(t), None) => Payload::Text(t),
        (None, Some(t)) => Payload::Tokens(t),
    };
    match (&p, spec.mode) {
        (Payload::Text(_), TokenizerMode::Pretokenized) => Err(format!(
            "{field:?} is text but the tokenizer is pretokenized; send \"{field}_tokens\""
        )),
        (Payload::Tokens(_), TokenizerMode::Whitespace | TokenizerMode::Byte) => Err(format!(
            "\"{field}_tokens\" given but the tokenizer expects text in {field:?}"
        )),
        _ => Ok(p),
    }
}

/// Parses and validates one record on its own, without sequence checks.
pub fn parse_record(line: &str, spec: TokenizerSpec) -> Result<TranscriptRecord, String> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let id = |id: Option<String>| id.filter(|s| !s.is_empty()).ok_or("missing conversation_id");
    match raw {
        RawRecord::Init {
            conversation_id,
            prompt,
            prompt_tokens,
        } => Ok(TranscriptRecord::Init {
            conversation_id: id(conversation_id)?,
            prompt: payload("prompt", prompt, prompt_tokens, spec)?,
        }),
        RawRecord::Turn {
            conversation_id,
            turn_index,
            response,
            response_tokens,
            next_prompt,
            next_prompt_tokens,
            external_scores,
        } => {
            let turn_index = turn_index.ok_or("missing turn_index")?;
            if let Some((name, v)) = external_scores.iter().find(|(_, v)| !v.is_finite()) {
                return Err(format!("external score {name:?} is not finite ({v})"));
            }
            Ok(TranscriptRecord::Turn {
                conversation_id: id(conversation_id)?,
                turn_index,
                response: payload("response", response, response_tokens, spec)?,
                next_prompt: payload("next_prompt", next_prompt, next_prompt_tokens, spec)?,
                external_scores,
            })
        }
    }
}

/// Where each conversation stands while a transcript is read.
#[derive(Debug, Default)]
pub struct SequenceChecker {
    next: HashMap<String, u32>,
}

impl SequenceChecker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accepts turns of `id` starting at `next_turn` without an init record.
    pub fn resume(&mut self, id: impl Into<String>, next_turn: u32) {
        self.next.insert(id.into(), next_turn);
    }

    pub fn check(&mut self, record: &TranscriptRecord) -> Result<(), String> {
        match record {
            TranscriptRecord::Init {
                conversation_id, ..
            } => {
                if self.next.contains_key(conversation_id) {
                    return Err(format!("second init for conversation {conversation_id:?}"));
                }
                self.next.insert(conversation_id.clone(), 1);
                Ok(())
            }
            TranscriptRecord::Turn {
                conversation_id,
                turn_index,
                ..
            } => {
                let Some(next) = self.next.get_mut(conversation_id) else {
                    return Err(format!(
                        "turn for conversation {conversation_id:?} before its init record"
                    ));
                };
                if *turn_index != *next {
                    return Err(format!(
                        "turn index {turn_index} for conversation {conversation_id:?}, expected {next}"
                    ));
                }
                *next += 1;
                Ok(())
            }
        }
    }
}

/// Reads a whole transcript. Blank lines are skipped; the first bad line
/// aborts with its 1-based line number.
pub fn parse_transcript<R: BufRead>(
    reader: R,
    spec: TokenizerSpec,
) -> Result<Vec<TranscriptRecord>, TransportError> {
    parse_with(reader, spec, SequenceChecker::new())
}

/// Like [`parse_transcript`] but with conversation positions already set.
pub fn parse_with<R: BufRead>(
    reader: R,
    spec: TokenizerSpec,
    mut checker: SequenceChecker,
) -> Result<Vec<TranscriptRecord>, TransportError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |message| TransportError::Parse {
            line: i + 1,
            message,
        };
        let record = parse_record(&line, spec).map_err(at)?;
        checker.check(&record).map_err(at)?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_transcript<W: Write>(mut w: W, records: &[TranscriptRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(w, "{}", r.to_json())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const PRE: TokenizerSpec = TokenizerSpec {
        mode: TokenizerMode::Pretokenized,
        lowercase: false,
    };

    fn parse(s: &str) -> Result<Vec<TranscriptRecord>, TransportError> {
        parse_transcript(s.as_bytes(), PRE)
    }

    fn turn(i: u32) -> String {
        format!(
            r#"{{"kind":"turn","conversation_id":"c","turn_index":{i},"response_tokens":[1,2],"next_prompt_tokens":[3]}}"#
        )
    }

    const INIT: &str = r#"{"kind":"init","conversation_id":"c","prompt_tokens":[0]}"#;

    #[test]
    fn init_and_three_turns() {
        let text = [INIT.to_string(), turn(1), turn(2), turn(3)].join("\n");
        let recs = parse(&text).unwrap();
        assert_eq!(recs.len(), 4);
        assert!(matches!(recs[3], TranscriptRecord::Turn { turn_index: 3, .. }));
    }

    #[test]
    fn turn_before_init() {
        let err = parse(&turn(1)).unwrap_err();
        assert!(matches!(err, TransportError::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn gap_in_turns() {
        let text = [INIT.to_string(), turn(1), turn(2), turn(4)].join("\n");
        match parse(&text).unwrap_err() {
            TransportError::Parse { line, message } => {
                assert_eq!(line, 4);
                assert!(message.contains("expected 3"), "{message}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn both_or_neither_form() {
        let both = r#"{"kind":"init","conversation_id":"c","prompt":"x","prompt_tokens":[1]}"#;
        let neither = r#"{"kind":"init","conversation_id":"c"}"#;
        for bad in [both, neither] {
            assert!(matches!(parse(bad), Err(TransportError::Parse { line: 1, .. })));
        }
    }

    #[test]
    fn form_must_match_tokenizer() {
        let text = r#"{"kind":"init","conversation_id":"c","prompt":"hello"}"#;
        assert!(parse(text).is_err());
        assert!(parse_transcript(text.as_bytes(), TokenizerSpec::whitespace()).is_ok());
        assert!(parse_transcript(INIT.as_bytes(), TokenizerSpec::whitespace()).is_err());
    }

    #[test]
    fn records_round_trip() {
        let mut scores = BTreeMap::new();
        scores.insert("judge".to_string(), 0.125);
        let recs = vec![
            TranscriptRecord::Init {
                conversation_id: "c".into(),
                prompt: Payload::Tokens(vec![TokenId(5)]),
            },
            TranscriptRecord::Turn {
                conversation_id: "c".into(),
                turn_index: 1,
                response: Payload::Tokens(vec![TokenId(1)]),
                next_prompt: Payload::Tokens(vec![]),
                external_scores: scores,
            },
        ];
        let mut buf = Vec::new();
        write_transcript(&mut buf, &recs).unwrap();
        assert_eq!(parse_transcript(buf.as_slice(), PRE).unwrap(), recs);
    }

    #[test]
    fn blank_lines_keep_numbering() {
        let text = format!("{INIT}\n\n{}\n", turn(2));
        assert!(matches!(parse(&text), Err(TransportError::Parse { line: 3, .. })));
    }
}
