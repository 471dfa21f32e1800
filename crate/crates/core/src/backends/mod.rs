//! Clients for the external model roles.
//!
//! Every role speaks the same JSON-over-HTTP protocol (see [`wire`]), so a
//! [`BackendClient`] is just an endpoint description plus a [`Transport`].
//! [`MockBackend`] implements the transport in-process with deterministic,
//! seed-driven outputs and fault injection for tests.

mod client;
mod http;
mod mock;
pub mod wire;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use client::{BackendClient, BackendEndpoint, ClientStats, RecordingSleeper, Sleeper, ThreadSleeper};
pub use http::HttpTransport;
pub use mock::{Fault, MockBackend, MockEvent, MockPhase};
pub use wire::{BackendMeta, Op, WireRequest, WireResponse};

/// The eight external model roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Separator,
    Asr,
    AudioCaptioner,
    MusicGate,
    MusicCaptioner,
    VideoCaptioner,
    Synthesizer,
    Embedder,
}

impl Role {
    pub const ALL: [Role; 8] = [
        Role::Separator,
        Role::Asr,
        Role::AudioCaptioner,
        Role::MusicGate,
        Role::MusicCaptioner,
        Role::VideoCaptioner,
        Role::Synthesizer,
        Role::Embedder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Role::Separator => "separator",
            Role::Asr => "asr",
            Role::AudioCaptioner => "audio_captioner",
            Role::MusicGate => "music_gate",
            Role::MusicCaptioner => "music_captioner",
            Role::VideoCaptioner => "video_captioner",
            Role::Synthesizer => "synthesizer",
            Role::Embedder => "embedder",
        }
    }

    /// The single operation this role serves.
    pub fn op(self) -> Op {
        match self {
            Role::Separator => Op::Separate,
            Role::MusicGate => Op::Classify,
            Role::Embedder => Op::Embed,
            Role::Asr
            | Role::AudioCaptioner
            | Role::MusicCaptioner
            | Role::VideoCaptioner
            | Role::Synthesizer => Op::Generate,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown role `{s}`"))
    }
}

/// A media file path or URL. Stems derived by separation are references
/// too; they are never mutated by downstream stages.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MediaRef(pub String);

impl MediaRef {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MediaRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedKind {
    Audio,
    Text,
}

/// Music-gate decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub music_score: f64,
    pub passed: bool,
}

impl GateResult {
    /// `passed` iff `music_score >= threshold`.
    pub fn evaluate(music_score: f64, threshold: f64) -> Self {
        Self {
            music_score,
            passed: music_score >= threshold,
        }
    }
}

/// Transport-level failure for a single attempt.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("backend returned HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Timeout | TransportError::Connect(_) => true,
            TransportError::Status { code, .. } => *code >= 500 || *code == 429,
            TransportError::Protocol(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("{role}: precondition failed: {message}")]
    Precondition { role: Role, message: String },
    #[error("{role} {op} failed after {attempts} attempt(s): {source}")]
    Failed {
        role: Role,
        op: Op,
        attempts: u32,
        #[source]
        source: TransportError,
    },
    #[error("{role}: protocol error: {message}")]
    Protocol { role: Role, message: String },
    #[error("{role}: backend reported failure: {message}")]
    Rejected { role: Role, message: String },
}

/// Abstraction over how a request reaches a backend.
pub trait Transport: Send + Sync {
    /// Handshake: `GET {base}/v1/meta`.
    fn meta(&self, role: Role) -> Result<BackendMeta, TransportError>;

    /// `POST {base}/v1/{op}`.
    fn send(
        &self,
        op: Op,
        request: &WireRequest,
        timeout: std::time::Duration,
    ) -> Result<WireResponse, TransportError>;

    /// Stable identity string used in cache fingerprints.
    fn identity(&self, role: Role) -> String;
}
