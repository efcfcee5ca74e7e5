//! Files, command line and HTTP front ends for the conversation monitor.
//!
//! Transcripts are JSON lines ([`transcript`]); snapshots persist a running
//! conversation ([`snapshot`]); [`service`] exposes the monitor over HTTP and
//! [`commands`] backs the `idt` binary.

pub mod commands;
pub mod config;
pub mod output;
pub mod report;
pub mod service;
pub mod session;
pub mod snapshot;
pub mod transcript;

use idt_core::IdtError;
use idt_harness::HarnessError;
use thiserror::Error;

pub use config::AppConfig;
pub use session::{replay_records, Session};
pub use snapshot::{load_state, save_state, StateSnapshot, SNAPSHOT_VERSION};
pub use transcript::{parse_transcript, Payload, TranscriptRecord};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("config: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("snapshot version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("snapshot checksum mismatch (truncated or modified file)")]
    Checksum,
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Monitor(#[from] IdtError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for TransportError {
    fn from(e: csv::Error) -> Self {
        TransportError::Csv(e.to_string())
    }
}

impl From<serde_json::Error> for TransportError {
    fn from(e: serde_json::Error) -> Self {
        TransportError::Invalid(e.to_string())
    }
}
