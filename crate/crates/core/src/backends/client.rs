use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::wire::{BackendMeta, Op, WireRequest, WireResponse};
use super::{BackendError, EmbedKind, GateResult, MediaRef, Role, Transport, TransportError};

/// Where and how to reach one backend role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEndpoint {
    pub role: Role,
    pub base_url: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
}

impl BackendEndpoint {
    pub fn new(role: Role, base_url: impl Into<String>) -> Self {
        Self {
            role,
            base_url: base_url.into(),
            timeout_s: 60.0,
            max_retries: 2,
            backoff_base_ms: 200,
        }
    }

    pub fn is_mock(&self) -> bool {
        self.base_url.starts_with("mock://")
    }

    /// Returns `(field, message)` on the first violated constraint.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(("timeout_s", format!("must be > 0, got {}", self.timeout_s)));
        }
        if self.is_mock() {
            return Ok(());
        }
        match reqwest::Url::parse(&self.base_url) {
            Ok(url) if matches!(url.scheme(), "http" | "https") && url.host().is_some() => Ok(()),
            Ok(url) => Err(("base_url", format!("unsupported scheme `{}`", url.scheme()))),
            Err(e) => Err(("base_url", format!("invalid URL `{}`: {e}", self.base_url))),
        }
    }

    /// Delay before retry `n` (1-based): `backoff_base_ms * 2^(n-1)`.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor))
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }
}

/// Source of retry delays; swapped for a recording clock in tests.
pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Default)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Records requested delays without sleeping.
#[derive(Debug, Default)]
pub struct RecordingSleeper {
    delays: Mutex<Vec<Duration>>,
}

impl RecordingSleeper {
    pub fn delays(&self) -> Vec<Duration> {
        self.delays.lock().unwrap().clone()
    }
}

impl Sleeper for RecordingSleeper {
    fn sleep(&self, d: Duration) {
        self.delays.lock().unwrap().push(d);
    }
}

#[derive(Debug, Default)]
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Counters for one client.
#[derive(Debug, Default)]
pub struct ClientStats {
    pub attempts: AtomicU64,
    pub retries: AtomicU64,
    pub failures: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatsSnapshot {
    pub attempts: u64,
    pub retries: u64,
    pub failures: u64,
}

/// A typed, retrying client for one role.
pub struct BackendClient {
    endpoint: BackendEndpoint,
    transport: Arc<dyn Transport>,
    sleeper: Arc<dyn Sleeper>,
    inflight: Semaphore,
    params: Map<String, Value>,
    meta: OnceLock<BackendMeta>,
    handshake: Mutex<()>,
    stats: ClientStats,
}

impl BackendClient {
    pub fn new(endpoint: BackendEndpoint, transport: Arc<dyn Transport>) -> Self {
        Self {
            endpoint,
            transport,
            sleeper: Arc::new(ThreadSleeper),
            inflight: Semaphore::new(4),
            params: Map::new(),
            meta: OnceLock::new(),
            handshake: Mutex::new(()),
            stats: ClientStats::default(),
        }
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.inflight = Semaphore::new(n);
        self
    }

    /// Generation parameters passed through verbatim in `params`.
    pub fn with_params(mut self, params: Map<String, Value>) -> Self {
        self.params = params;
        self
    }

    pub fn endpoint(&self) -> &BackendEndpoint {
        &self.endpoint
    }

    pub fn role(&self) -> Role {
        self.endpoint.role
    }

    /// Identity string for cache fingerprints.
    pub fn identity(&self) -> String {
        format!(
            "{}|{}|{}",
            self.transport.identity(self.endpoint.role),
            self.endpoint.base_url,
            serde_json::to_string(&self.params).unwrap_or_default()
        )
    }

    pub fn stats(&self) -> StatsSnapshot {
        StatsSnapshot {
            attempts: self.stats.attempts.load(Ordering::Relaxed),
            retries: self.stats.retries.load(Ordering::Relaxed),
            failures: self.stats.failures.load(Ordering::Relaxed),
        }
    }

    fn precondition(&self, message: impl Into<String>) -> BackendError {
        BackendError::Precondition {
            role: self.role(),
            message: message.into(),
        }
    }

    fn protocol(&self, message: impl Into<String>) -> BackendError {
        BackendError::Protocol {
            role: self.role(),
            message: message.into(),
        }
    }

    fn expect_role(&self, allowed: &[Role]) -> Result<(), BackendError> {
        if allowed.contains(&self.role()) {
            Ok(())
        } else {
            Err(self.precondition(format!("operation not served by role {}", self.role())))
        }
    }

    /// Runs `attempt` with the endpoint's retry schedule: at most
    /// `1 + max_retries` attempts, retry `n` delayed by
    /// `backoff_base_ms * 2^(n-1)`. Non-retryable errors stop immediately.
    fn with_retries<T>(
        &self,
        op: Op,
        mut attempt: impl FnMut() -> Result<T, TransportError>,
    ) -> Result<T, BackendError> {
        let max_attempts = 1 + self.endpoint.max_retries;
        let mut n = 1;
        loop {
            if n > 1 {
                self.stats.retries.fetch_add(1, Ordering::Relaxed);
                self.sleeper.sleep(self.endpoint.backoff(n - 1));
            }
            self.stats.attempts.fetch_add(1, Ordering::Relaxed);
            let result = {
                let _permit = self.inflight.acquire();
                attempt()
            };
            match result {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && n < max_attempts => {
                    tracing::debug!(role = %self.role(), %op, attempt = n, error = %e, "retrying");
                    n += 1;
                }
                Err(source) => {
                    self.stats.failures.fetch_add(1, Ordering::Relaxed);
                    return Err(BackendError::Failed {
                        role: self.role(),
                        op,
                        attempts: n,
                        source,
                    });
                }
            }
        }
    }

    fn call(&self, op: Op, request: WireRequest) -> Result<Value, BackendError> {
        if let Err(message) = request.validate(op) {
            return Err(self.precondition(message));
        }
        let timeout = self.endpoint.timeout();
        let response: WireResponse =
            self.with_retries(op, || self.transport.send(op, &request, timeout))?;
        if !response.ok {
            return Err(BackendError::Rejected {
                role: self.role(),
                message: response.result.to_string(),
            });
        }
        response.validate(op).map_err(|m| self.protocol(m))?;
        Ok(response.result)
    }

    fn request(&self, clip_id: &str, prompt: Option<&str>, media: Option<&MediaRef>) -> WireRequest {
        WireRequest {
            clip_id: clip_id.to_owned(),
            role: self.role(),
            prompt: prompt.map(str::to_owned),
            media_b64_or_url: media.map(|m| m.0.clone()),
            params: self.params.clone(),
        }
    }

    /// Handshake, cached after the first success.
    pub fn meta(&self) -> Result<&BackendMeta, BackendError> {
        if let Some(m) = self.meta.get() {
            return Ok(m);
        }
        // Concurrent first callers wait here so only one handshake goes out.
        let _guard = self.handshake.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(m) = self.meta.get() {
            return Ok(m);
        }
        let meta = self.with_retries(Op::Embed, || self.transport.meta(self.role()))?;
        if meta.role != self.role() {
            return Err(self.protocol(format!(
                "handshake role {} does not match endpoint role {}",
                meta.role,
                self.role()
            )));
        }
        Ok(self.meta.get_or_init(|| meta))
    }

    /// Splits `audio` into (vocal, accompaniment) stems.
    pub fn separate(&self, clip_id: &str, audio: &MediaRef) -> Result<(MediaRef, MediaRef), BackendError> {
        self.expect_role(&[Role::Separator])?;
        let result = self.call(Op::Separate, self.request(clip_id, None, Some(audio)))?;
        let stem = |k: &str| MediaRef::new(result[k].as_str().unwrap_or_default());
        Ok((stem("vocal"), stem("accompaniment")))
    }

    pub fn classify_music(
        &self,
        clip_id: &str,
        audio: &MediaRef,
        threshold: f64,
    ) -> Result<GateResult, BackendError> {
        self.expect_role(&[Role::MusicGate])?;
        let result = self.call(Op::Classify, self.request(clip_id, None, Some(audio)))?;
        let score = result["music_score"].as_f64().expect("validated");
        Ok(GateResult::evaluate(score, threshold))
    }

    /// Returns the backend's raw text; an empty string is a valid answer.
    pub fn generate_text(
        &self,
        clip_id: &str,
        prompt: &str,
        media: Option<&MediaRef>,
    ) -> Result<String, BackendError> {
        self.expect_role(&[
            Role::Asr,
            Role::AudioCaptioner,
            Role::MusicCaptioner,
            Role::VideoCaptioner,
            Role::Synthesizer,
        ])?;
        if prompt.is_empty() {
            return Err(self.precondition("prompt is empty"));
        }
        let result = self.call(Op::Generate, self.request(clip_id, Some(prompt), media))?;
        Ok(result.as_str().expect("validated").to_owned())
    }

    /// Embeds an audio reference or a text. The vector length must match the
    /// `embed_dim` announced in the handshake.
    pub fn embed(&self, clip_id: &str, kind: EmbedKind, payload: &str) -> Result<Vec<f64>, BackendError> {
        self.expect_role(&[Role::Embedder])?;
        if payload.is_empty() {
            return Err(self.precondition("embedding payload is empty"));
        }
        let dim = self
            .meta()?
            .embed_dim
            .ok_or_else(|| self.protocol("handshake did not declare embed_dim"))?;
        let mut request = match kind {
            EmbedKind::Audio => self.request(clip_id, None, Some(&MediaRef::new(payload))),
            EmbedKind::Text => self.request(clip_id, Some(payload), None),
        };
        request.params.insert("kind".into(), json!(kind));
        let result = self.call(Op::Embed, request)?;
        let vector: Vec<f64> = result
            .as_array()
            .expect("validated")
            .iter()
            .map(|v| v.as_f64().expect("validated"))
            .collect();
        if vector.len() != dim {
            return Err(self.protocol(format!(
                "embedding has dimension {}, handshake declared {dim}",
                vector.len()
            )));
        }
        Ok(vector)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Fault, MockBackend};

    fn client(mock: &Arc<MockBackend>, role: Role, max_retries: u32) -> (BackendClient, Arc<RecordingSleeper>) {
        let sleeper = Arc::new(RecordingSleeper::default());
        let mut ep = BackendEndpoint::new(role, "mock://");
        ep.max_retries = max_retries;
        ep.backoff_base_ms = 100;
        let c = BackendClient::new(ep, mock.clone()).with_sleeper(sleeper.clone());
        (c, sleeper)
    }

    #[test]
    fn separate_echoes_stems() {
        let mock = Arc::new(MockBackend::new(7));
        let (c, _) = client(&mock, Role::Separator, 2);
        let (v, a) = c.separate("c1", &MediaRef::new("in.wav")).unwrap();
        assert_eq!(v.as_str(), "in.wav#vocal");
        assert_eq!(a.as_str(), "in.wav#accomp");
    }

    #[test]
    fn timeout_then_success_records_one_retry() {
        let mock = Arc::new(MockBackend::new(7));
        mock.inject(Role::Separator, [Fault::Timeout]);
        let (c, sleeper) = client(&mock, Role::Separator, 2);
        c.separate("c1", &MediaRef::new("in.wav")).unwrap();
        assert_eq!(c.stats().retries, 1);
        assert_eq!(c.stats().attempts, 2);
        assert_eq!(sleeper.delays(), vec![Duration::from_millis(100)]);
    }

    #[test]
    fn exhausted_retries_fail_with_cause() {
        let mock = Arc::new(MockBackend::new(7));
        mock.inject(Role::Separator, [Fault::Timeout, Fault::Timeout, Fault::Timeout]);
        let (c, sleeper) = client(&mock, Role::Separator, 2);
        let err = c.separate("c1", &MediaRef::new("in.wav")).unwrap_err();
        match err {
            BackendError::Failed { attempts, source, .. } => {
                assert_eq!(attempts, 3);
                assert_eq!(source, TransportError::Timeout);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(
            sleeper.delays(),
            vec![Duration::from_millis(100), Duration::from_millis(200)]
        );
        assert_eq!(mock.calls(Role::Separator, "c1"), 3);
    }

    #[test]
    fn client_error_is_not_retried() {
        let mock = Arc::new(MockBackend::new(7));
        mock.inject(Role::Separator, [Fault::Status(400)]);
        let (c, sleeper) = client(&mock, Role::Separator, 5);
        let err = c.separate("c1", &MediaRef::new("in.wav")).unwrap_err();
        assert!(matches!(err, BackendError::Failed { attempts: 1, .. }));
        assert!(sleeper.delays().is_empty());
    }

    #[test]
    fn gate_boundary() {
        let dir = tempfile::tempdir().unwrap();
        let gate_dir = dir.path().join("music_gate");
        std::fs::create_dir_all(&gate_dir).unwrap();
        for (clip, score) in [("one", 1.0), ("zero", 0.0), ("half", 0.5)] {
            std::fs::write(gate_dir.join(format!("{clip}.json")), format!("{{\"music_score\": {score}}}")).unwrap();
        }
        let mock = Arc::new(MockBackend::new(1).with_fixtures(dir.path()));
        let (c, _) = client(&mock, Role::MusicGate, 0);
        let a = MediaRef::new("x.wav");
        assert!(c.classify_music("one", &a, 0.5).unwrap().passed);
        assert!(!c.classify_music("zero", &a, 0.5).unwrap().passed);
        let half = c.classify_music("half", &a, 0.5).unwrap();
        assert_eq!(half.music_score, 0.5);
        assert!(half.passed);
    }

    #[test]
    fn generate_returns_fixture_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        for (role, clip, text) in [
            ("asr", "silent", ""),
            ("synthesizer", "fenced", "```json\n{\"Audio caption\": \"x\"}\n```"),
            ("audio_captioner", "dog", "A dog barks twice."),
        ] {
            std::fs::create_dir_all(dir.path().join(role)).unwrap();
            std::fs::write(dir.path().join(role).join(format!("{clip}.txt")), text).unwrap();
        }
        let mock = Arc::new(MockBackend::new(1).with_fixtures(dir.path()));
        let (asr, _) = client(&mock, Role::Asr, 0);
        assert_eq!(asr.generate_text("silent", "Transcribe", None).unwrap(), "");
        let (syn, _) = client(&mock, Role::Synthesizer, 0);
        assert_eq!(
            syn.generate_text("fenced", "Fuse", None).unwrap(),
            "```json\n{\"Audio caption\": \"x\"}\n```"
        );
        let (cap, _) = client(&mock, Role::AudioCaptioner, 0);
        assert_eq!(
            cap.generate_text("dog", "Describe", Some(&MediaRef::new("d.wav"))).unwrap(),
            "A dog barks twice."
        );
        assert!(matches!(
            cap.generate_text("dog", "", None),
            Err(BackendError::Precondition { .. })
        ));
    }

    #[test]
    fn embeddings_are_deterministic_and_checked() {
        let mock = Arc::new(MockBackend::new(3).with_embed_dim(16));
        let (c, _) = client(&mock, Role::Embedder, 0);
        let a1 = c.embed("c", EmbedKind::Text, "a").unwrap();
        let a2 = c.embed("c", EmbedKind::Text, "a").unwrap();
        let b = c.embed("c", EmbedKind::Text, "b").unwrap();
        assert_eq!(a1.len(), 16);
        assert_eq!(a1, a2);
        assert!((crate::vector::norm(&a1) - 1.0).abs() < 1e-12);
        assert!(a1.iter().zip(&b).any(|(x, y)| x != y));
        assert!(matches!(
            c.embed("c", EmbedKind::Text, ""),
            Err(BackendError::Precondition { .. })
        ));
    }

    #[test]
    fn embedding_dimension_mismatch_is_protocol_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("embedder")).unwrap();
        std::fs::write(dir.path().join("embedder/c.json"), r#"{"audio": [1.0, 0.0, 0.0]}"#).unwrap();
        let mock = Arc::new(MockBackend::new(3).with_embed_dim(4).with_fixtures(dir.path()));
        let (c, _) = client(&mock, Role::Embedder, 0);
        assert!(matches!(
            c.embed("c", EmbedKind::Audio, "c.wav"),
            Err(BackendError::Protocol { .. })
        ));
    }

    #[test]
    fn backoff_doubles() {
        let mut ep = BackendEndpoint::new(Role::Asr, "mock://");
        ep.backoff_base_ms = 50;
        let delays: Vec<u64> = (1..=4).map(|n| ep.backoff(n).as_millis() as u64).collect();
        assert_eq!(delays, vec![50, 100, 200, 400]);
    }

    #[test]
    fn endpoint_validation() {
        let mut ep = BackendEndpoint::new(Role::Asr, "http://localhost:9000");
        assert!(ep.validate().is_ok());
        ep.base_url = "not a url".into();
        assert_eq!(ep.validate().unwrap_err().0, "base_url");
        ep.base_url = "ftp://host".into();
        assert_eq!(ep.validate().unwrap_err().0, "base_url");
        ep.base_url = "mock://".into();
        ep.timeout_s = 0.0;
        assert_eq!(ep.validate().unwrap_err().0, "timeout_s");
    }
}
