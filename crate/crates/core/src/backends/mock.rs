use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::wire::{BackendMeta, Op, WireRequest, WireResponse};
use super::{EmbedKind, Role, Transport, TransportError};

/// An injected failure for the next request to a role.
#[derive(Debug, Clone, PartialEq)]
pub enum Fault {
    Timeout,
    Status(u16),
    /// Reply with `ok: false`.
    Reject,
    /// Reply with a result that violates the wire schema.
    Garbage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MockPhase {
    Start,
    End,
}

/// One entry of the mock's global request log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEvent {
    pub seq: u64,
    pub clip_id: String,
    pub role: Role,
    pub phase: MockPhase,
}

/// Pending faults per role, optionally narrowed to one clip.
type FaultQueues = HashMap<(Role, Option<String>), VecDeque<Fault>>;

/// In-process backend for every role.
///
/// Outputs are pure functions of `(role, request, seed)` unless overridden
/// by fixtures, either in memory or from a directory laid out as:
///
/// ```text
/// <dir>/<role>/<clip_id>.txt        generate result (raw text)
/// <dir>/music_gate/<clip_id>.json   {"music_score": 0.7}
/// <dir>/embedder/<clip_id>.json     {"audio": [...], "text": [...]}
/// ```
#[derive(Debug)]
pub struct MockBackend {
    seed: u64,
    embed_dim: usize,
    fixtures: Option<PathBuf>,
    texts: Mutex<HashMap<(Role, String), String>>,
    scores: Mutex<HashMap<String, f64>>,
    vectors: Mutex<HashMap<(String, EmbedKind), Vec<f64>>>,
    faults: Mutex<FaultQueues>,
    counters: Mutex<BTreeMap<(Role, String), u64>>,
    meta_calls: AtomicU64,
    events: Mutex<Vec<MockEvent>>,
    seq: AtomicU64,
    latency: Option<Duration>,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            embed_dim: 32,
            fixtures: None,
            texts: Mutex::default(),
            scores: Mutex::default(),
            vectors: Mutex::default(),
            faults: Mutex::default(),
            counters: Mutex::default(),
            meta_calls: AtomicU64::new(0),
            events: Mutex::default(),
            seq: AtomicU64::new(0),
            latency: None,
        }
    }

    pub fn with_fixtures(mut self, dir: impl Into<PathBuf>) -> Self {
        self.fixtures = Some(dir.into());
        self
    }

    pub fn with_embed_dim(mut self, dim: usize) -> Self {
        self.embed_dim = dim.max(1);
        self
    }

    /// Adds an artificial delay to every request, to widen race windows.
    pub fn with_latency(mut self, d: Duration) -> Self {
        self.latency = Some(d);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn set_text(&self, role: Role, clip_id: &str, text: impl Into<String>) {
        self.texts.lock().unwrap().insert((role, clip_id.to_owned()), text.into());
    }

    pub fn set_music_score(&self, clip_id: &str, score: f64) {
        self.scores.lock().unwrap().insert(clip_id.to_owned(), score);
    }

    pub fn set_embedding(&self, clip_id: &str, kind: EmbedKind, v: Vec<f64>) {
        self.vectors.lock().unwrap().insert((clip_id.to_owned(), kind), v);
    }

    /// Queues faults consumed by the next requests to `role` for any clip.
    pub fn inject(&self, role: Role, faults: impl IntoIterator<Item = Fault>) {
        self.faults
            .lock()
            .unwrap()
            .entry((role, None))
            .or_default()
            .extend(faults);
    }

    /// Queues faults for requests to `role` about one clip only.
    pub fn inject_for_clip(&self, role: Role, clip_id: &str, faults: impl IntoIterator<Item = Fault>) {
        self.faults
            .lock()
            .unwrap()
            .entry((role, Some(clip_id.to_owned())))
            .or_default()
            .extend(faults);
    }

    /// Requests received for `(role, clip_id)`, including failed attempts.
    pub fn calls(&self, role: Role, clip_id: &str) -> u64 {
        self.counters
            .lock()
            .unwrap()
            .get(&(role, clip_id.to_owned()))
            .copied()
            .unwrap_or(0)
    }

    pub fn calls_for_clip(&self, clip_id: &str) -> u64 {
        self.counters
            .lock()
            .unwrap()
            .iter()
            .filter(|((_, c), _)| c == clip_id)
            .map(|(_, n)| n)
            .sum()
    }

    pub fn calls_for_role(&self, role: Role) -> u64 {
        self.counters
            .lock()
            .unwrap()
            .iter()
            .filter(|((r, _), _)| *r == role)
            .map(|(_, n)| n)
            .sum()
    }

    pub fn total_calls(&self) -> u64 {
        self.counters.lock().unwrap().values().sum()
    }

    pub fn meta_calls(&self) -> u64 {
        self.meta_calls.load(Ordering::Relaxed)
    }

    pub fn reset_counters(&self) {
        self.counters.lock().unwrap().clear();
        self.events.lock().unwrap().clear();
        self.meta_calls.store(0, Ordering::Relaxed);
    }

    pub fn events(&self) -> Vec<MockEvent> {
        self.events.lock().unwrap().clone()
    }

    fn log(&self, clip_id: &str, role: Role, phase: MockPhase) {
        let mut events = self.events.lock().unwrap();
        // Sequence numbers are taken under the lock so log order matches them.
        let seq = self.seq.fetch_add(1, Ordering::SeqCst);
        events.push(MockEvent {
            seq,
            clip_id: clip_id.to_owned(),
            role,
            phase,
        });
    }

    fn next_fault(&self, role: Role, clip_id: &str) -> Option<Fault> {
        let mut faults = self.faults.lock().unwrap();
        if let Some(q) = faults.get_mut(&(role, Some(clip_id.to_owned()))) {
            if let Some(f) = q.pop_front() {
                return Some(f);
            }
        }
        faults.get_mut(&(role, None)).and_then(VecDeque::pop_front)
    }

    fn rng(&self, parts: &[&str]) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p.as_bytes());
        }
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    fn short_hash(&self, parts: &[&str]) -> String {
        format!("{:08x}", self.rng(parts).random::<u32>())
    }

    /// A non-empty, seeded subset of the four caption keys.
    fn modality_reply(&self, clip: &str, prompt: &str) -> String {
        const KEYS: [&str; 4] = ["audio_caption", "speech_caption", "music_caption", "video_caption"];
        let mask = self.rng(&["modality", clip, prompt]).random_range(1u8..16);
        let keys: Vec<String> = (0..4).filter(|i| mask & (1 << i) != 0).map(|i| format!("'{}'", KEYS[i])).collect();
        format!("[{}]", keys.join(", "))
    }

    fn fixture_file(&self, role: Role, clip_id: &str, ext: &str) -> Option<String> {
        let dir = self.fixtures.as_deref()?;
        std::fs::read_to_string(fixture_path(dir, role, clip_id, ext)).ok()
    }

    fn respond(&self, op: Op, req: &WireRequest) -> Result<Value, TransportError> {
        let clip = req.clip_id.as_str();
        let media = req.media_b64_or_url.as_deref().unwrap_or("");
        let prompt = req.prompt.as_deref().unwrap_or("");
        match op {
            Op::Separate => Ok(json!({
                "vocal": format!("{media}#vocal"),
                "accompaniment": format!("{media}#accomp"),
            })),
            Op::Classify => {
                let fixed = self.scores.lock().unwrap().get(clip).copied();
                let score = match fixed {
                    Some(s) => s,
                    None => match self.fixture_file(Role::MusicGate, clip, "json") {
                        Some(text) => serde_json::from_str::<Value>(&text)
                            .ok()
                            .and_then(|v| v["music_score"].as_f64())
                            .ok_or_else(|| TransportError::Protocol(format!("bad music_gate fixture for {clip}")))?,
                        None => self.rng(&["classify", clip, media]).random::<f64>(),
                    },
                };
                Ok(json!({ "music_score": score }))
            }
            Op::Generate => {
                let fixed = self.texts.lock().unwrap().get(&(req.role, clip.to_owned())).cloned();
                if let Some(text) = fixed.or_else(|| self.fixture_file(req.role, clip, "txt")) {
                    return Ok(Value::String(text));
                }
                let h = self.short_hash(&[req.role.name(), clip, prompt, media]);
                let text = match req.role {
                    Role::Asr => format!("mock transcript {h}"),
                    Role::AudioCaptioner => format!("Mock audio description of {clip} ({h})."),
                    Role::MusicCaptioner => format!("Mock music description ({h})."),
                    Role::VideoCaptioner => format!("00:01 - mock visual event ({h})"),
                    Role::Synthesizer if prompt.starts_with(MODALITY_PROMPT_PREFIX) => self.modality_reply(clip, prompt),
                    Role::Synthesizer if prompt.starts_with(EXTRACTION_PROMPT_PREFIX) => extraction_reply(prompt),
                    Role::Synthesizer => serde_json::to_string(&json!({
                        "Potential ambiguities": [format!("A sound in {clip} could be confused with another source.")],
                        "Audio caption": format!("A mock fused caption for {clip} ({h})."),
                    }))
                    .expect("json"),
                    other => return Err(TransportError::Protocol(format!("{other} does not generate text"))),
                };
                Ok(Value::String(text))
            }
            Op::Embed => {
                let kind = match req.params.get("kind").and_then(Value::as_str) {
                    Some("audio") => EmbedKind::Audio,
                    _ => EmbedKind::Text,
                };
                let fixed = self.vectors.lock().unwrap().get(&(clip.to_owned(), kind)).cloned();
                if let Some(v) = fixed {
                    return Ok(json!(v));
                }
                if let Some(text) = self.fixture_file(Role::Embedder, clip, "json") {
                    let key = match kind {
                        EmbedKind::Audio => "audio",
                        EmbedKind::Text => "text",
                    };
                    if let Some(v) = serde_json::from_str::<Value>(&text).ok().and_then(|v| v.get(key).cloned()) {
                        return Ok(v);
                    }
                }
                Ok(json!(self.seeded_embedding(clip, kind, prompt, media)))
            }
        }
    }

    /// Audio and text vectors share a per-clip direction, so matching pairs
    /// score clearly above zero while unrelated pairs do not.
    fn seeded_embedding(&self, clip: &str, kind: EmbedKind, text: &str, media: &str) -> Vec<f64> {
        let mut shared = self.rng(&["embed-shared", clip]);
        let base: Vec<f64> = (0..self.embed_dim).map(|_| shared.random_range(-1.0..1.0)).collect();
        let base = crate::vector::normalized(&base).unwrap_or_else(|| vec![1.0; self.embed_dim]);
        let (weight, mut noise) = match kind {
            EmbedKind::Audio => (3.0, self.rng(&["embed-audio", media])),
            EmbedKind::Text => (1.5, self.rng(&["embed-text", text])),
        };
        let v: Vec<f64> = base
            .iter()
            .map(|b| weight * b + noise.random_range(-1.0..1.0))
            .collect();
        crate::vector::normalized(&v).unwrap_or(base)
    }
}

fn fixture_path(dir: &Path, role: Role, clip_id: &str, ext: &str) -> PathBuf {
    dir.join(role.name()).join(format!("{clip_id}.{ext}"))
}

impl Transport for MockBackend {
    fn meta(&self, role: Role) -> Result<BackendMeta, TransportError> {
        self.meta_calls.fetch_add(1, Ordering::Relaxed);
        Ok(BackendMeta {
            role,
            model_id: format!("mock-{}", role.name()),
            embed_dim: (role == Role::Embedder).then_some(self.embed_dim),
        })
    }

    fn send(&self, op: Op, req: &WireRequest, _timeout: Duration) -> Result<WireResponse, TransportError> {
        *self
            .counters
            .lock()
            .unwrap()
            .entry((req.role, req.clip_id.clone()))
            .or_default() += 1;
        self.log(&req.clip_id, req.role, MockPhase::Start);
        let outcome = self.handle(op, req);
        self.log(&req.clip_id, req.role, MockPhase::End);
        outcome
    }

    fn identity(&self, role: Role) -> String {
        format!(
            "mock:{}:seed={}:dim={}:fixtures={}",
            role.name(),
            self.seed,
            self.embed_dim,
            self.fixtures.as_deref().map(|p| p.display().to_string()).unwrap_or_default()
        )
    }
}

const MODALITY_PROMPT_PREFIX: &str = "You analyze descriptions from audio.";
const EXTRACTION_PROMPT_PREFIX: &str = "I will give you a sentence.";

/// Echoes the sentence's first and last words as a scene and an emotion.
fn extraction_reply(prompt: &str) -> String {
    let sentence = prompt
        .split_once("Sentence: '")
        .and_then(|(_, rest)| rest.split_once("'\n"))
        .map(|(s, _)| s)
        .unwrap_or("");
    let words: Vec<&str> = sentence
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.len() > 2)
        .collect();
    json!({
        "instrument": [],
        "emotion": words.last().into_iter().collect::<Vec<_>>(),
        "music genre": [],
        "scene": words.first().into_iter().collect::<Vec<_>>(),
    })
    .to_string()
}

impl MockBackend {
    fn handle(&self, op: Op, req: &WireRequest) -> Result<WireResponse, TransportError> {
        if let Some(d) = self.latency {
            std::thread::sleep(d);
        }
        req.validate(op).map_err(|m| TransportError::Status { code: 400, body: m })?;
        let model_id = format!("mock-{}", req.role.name());
        match self.next_fault(req.role, &req.clip_id) {
            Some(Fault::Timeout) => return Err(TransportError::Timeout),
            Some(Fault::Status(code)) => {
                return Err(TransportError::Status {
                    code,
                    body: "injected fault".into(),
                })
            }
            Some(Fault::Reject) => {
                return Ok(WireResponse {
                    ok: false,
                    result: json!("injected rejection"),
                    model_id,
                    latency_ms: 0,
                })
            }
            Some(Fault::Garbage) => {
                return Ok(WireResponse {
                    ok: true,
                    result: json!({"garbage": true}),
                    model_id,
                    latency_ms: 0,
                })
            }
            None => {}
        }
        let result = self.respond(op, req)?;
        Ok(WireResponse {
            ok: true,
            result,
            model_id,
            latency_ms: 0,
        })
    }
}
