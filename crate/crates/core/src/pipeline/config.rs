use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::prompt::{FusionTemplate, PromptTemplate, Prompts};
use super::PipelineError;
use crate::backends::{BackendEndpoint, Role};

/// Configuration error pointing at the offending field, e.g.
/// `endpoints.synthesizer.base_url`.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid config at `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
}

fn default_timeout() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    2
}

fn default_backoff() -> u64 {
    200
}

impl EndpointConfig {
    pub fn mock() -> Self {
        Self {
            base_url: "mock://".into(),
            timeout_s: default_timeout(),
            max_retries: default_retries(),
            backoff_base_ms: default_backoff(),
        }
    }

    pub fn to_endpoint(&self, role: Role) -> BackendEndpoint {
        BackendEndpoint {
            role,
            base_url: self.base_url.clone(),
            timeout_s: self.timeout_s,
            max_retries: self.max_retries,
            backoff_base_ms: self.backoff_base_ms,
        }
    }
}

/// Optional template overrides; unset entries use the built-in prompts.
/// Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptPaths {
    pub asr: Option<PathBuf>,
    pub audio_caption: Option<PathBuf>,
    pub music_caption: Option<PathBuf>,
    pub video_caption: Option<PathBuf>,
    pub fusion: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub workers: usize,
    /// Concurrent requests per endpoint.
    pub max_in_flight: usize,
    pub clip_deadline_s: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            workers: 8,
            max_in_flight: 4,
            clip_deadline_s: 300.0,
        }
    }
}

/// Which audio the music captioner hears.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MusicInput {
    #[default]
    Accompaniment,
    Original,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    pub seed: u64,
    pub fixtures: Option<PathBuf>,
    pub embed_dim: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            fixtures: None,
            embed_dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Keyed by role name; missing roles fall back to the in-process mock.
    pub endpoints: BTreeMap<String, EndpointConfig>,
    pub gate_threshold: f64,
    pub filter_threshold: f64,
    pub prompts: PromptPaths,
    /// Extra request parameters per role name.
    pub generation: BTreeMap<String, Map<String, Value>>,
    pub pool: PoolConfig,
    pub music_input: MusicInput,
    pub shard_size: usize,
    pub mock: MockConfig,
    /// Fail a clip up front if its media files do not exist.
    pub check_media_exists: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            endpoints: Role::ALL.iter().map(|r| (r.name().to_owned(), EndpointConfig::mock())).collect(),
            gate_threshold: 0.5,
            filter_threshold: 0.08,
            prompts: PromptPaths::default(),
            generation: BTreeMap::new(),
            pool: PoolConfig::default(),
            music_input: MusicInput::default(),
            shard_size: 1000,
            mock: MockConfig::default(),
            check_media_exists: true,
        }
    }
}

impl PipelineConfig {
    /// Reads, resolves relative paths, and validates a JSON config file.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("<file>", format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "<root>".to_owned() } else { path };
            ConfigError::new(field, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        let PromptPaths {
            asr,
            audio_caption,
            music_caption,
            video_caption,
            fusion,
        } = &mut self.prompts;
        for p in [asr, audio_caption, music_caption, video_caption, fusion] {
            fix(p);
        }
        fix(&mut self.mock.fixtures);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, ep) in &self.endpoints {
            let role: Role = name
                .parse()
                .map_err(|_| ConfigError::new(format!("endpoints.{name}"), "unknown role"))?;
            ep.to_endpoint(role)
                .validate()
                .map_err(|(field, message)| ConfigError::new(format!("endpoints.{name}.{field}"), message))?;
        }
        for name in self.generation.keys() {
            name.parse::<Role>()
                .map_err(|_| ConfigError::new(format!("generation.{name}"), "unknown role"))?;
        }
        if !self.gate_threshold.is_finite() {
            return Err(ConfigError::new("gate_threshold", "must be finite"));
        }
        if !(-1.0..=1.0).contains(&self.filter_threshold) {
            return Err(ConfigError::new("filter_threshold", "must lie in [-1, 1]"));
        }
        if self.pool.workers == 0 {
            return Err(ConfigError::new("pool.workers", "must be >= 1"));
        }
        if self.pool.max_in_flight == 0 {
            return Err(ConfigError::new("pool.max_in_flight", "must be >= 1"));
        }
        if self.pool.clip_deadline_s.is_nan() || self.pool.clip_deadline_s <= 0.0 {
            return Err(ConfigError::new("pool.clip_deadline_s", "must be > 0"));
        }
        if self.shard_size == 0 {
            return Err(ConfigError::new("shard_size", "must be >= 1"));
        }
        if self.mock.embed_dim == 0 {
            return Err(ConfigError::new("mock.embed_dim", "must be >= 1"));
        }
        Ok(())
    }

    pub fn endpoint(&self, role: Role) -> BackendEndpoint {
        self.endpoints
            .get(role.name())
            .cloned()
            .unwrap_or_else(EndpointConfig::mock)
            .to_endpoint(role)
    }

    pub fn params(&self, role: Role) -> Map<String, Value> {
        self.generation.get(role.name()).cloned().unwrap_or_default()
    }

    pub fn load_prompts(&self) -> Result<Prompts, PipelineError> {
        let mut prompts = Prompts::default();
        let p = &self.prompts;
        for (path, slot, name) in [
            (&p.asr, &mut prompts.asr, "asr"),
            (&p.audio_caption, &mut prompts.audio_caption, "audio_caption"),
            (&p.music_caption, &mut prompts.music_caption, "music_caption"),
            (&p.video_caption, &mut prompts.video_caption, "video_caption"),
        ] {
            if let Some(path) = path {
                *slot = PromptTemplate::load(name, path)?;
            }
        }
        if let Some(path) = &p.fusion {
            prompts.fusion = FusionTemplate::new(PromptTemplate::load("fusion", path)?)?;
        }
        Ok(prompts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = PipelineConfig::from_json("{}").unwrap();
        assert_eq!(c.gate_threshold, 0.5);
        assert_eq!(c.filter_threshold, 0.08);
        assert_eq!((c.pool.workers, c.pool.max_in_flight, c.pool.clip_deadline_s), (8, 4, 300.0));
        assert_eq!(c.music_input, MusicInput::Accompaniment);
        assert!(c.endpoint(Role::Embedder).is_mock());
    }

    #[test]
    fn bad_endpoint_url_names_field() {
        let err = PipelineConfig::from_json(r#"{"endpoints": {"synthesizer": {"base_url": "ftp://x"}}}"#).unwrap_err();
        assert_eq!(err.field, "endpoints.synthesizer.base_url");
        let err = PipelineConfig::from_json(r#"{"filter_threshold": 1.5}"#).unwrap_err();
        assert_eq!(err.field, "filter_threshold");
        let err = PipelineConfig::from_json(r#"{"endpoints": {"nobody": {"base_url": "mock://"}}}"#).unwrap_err();
        assert_eq!(err.field, "endpoints.nobody");
        let err = PipelineConfig::from_json(r#"{"endpoints": {"asr": {"base_url": "http://h:1", "timeout_s": 0}}}"#).unwrap_err();
        assert_eq!(err.field, "endpoints.asr.timeout_s");
    }

    #[test]
    fn scalar_validation() {
        assert_eq!(PipelineConfig::from_json(r#"{"pool": {"workers": 0}}"#).unwrap_err().field, "pool.workers");
        assert_eq!(PipelineConfig::from_json(r#"{"shard_size": 0}"#).unwrap_err().field, "shard_size");
        assert_eq!(PipelineConfig::from_json(r#"{"bogus": 1}"#).unwrap_err().field, "bogus");
        assert_eq!(
            PipelineConfig::from_json("{\"gate_threshold\": \"high\"}").unwrap_err().field,
            "gate_threshold"
        );
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("asr.txt"), "Transcribe.").unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, r#"{"prompts": {"asr": "asr.txt"}}"#).unwrap();
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!(c.load_prompts().unwrap().asr.text, "Transcribe.");
    }

    #[test]
    fn fusion_override_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fusion.txt");
        std::fs::write(&path, "no placeholders").unwrap();
        let mut c = PipelineConfig::default();
        c.prompts.fusion = Some(path);
        assert!(matches!(c.load_prompts(), Err(PipelineError::Template { .. })));
    }
}
