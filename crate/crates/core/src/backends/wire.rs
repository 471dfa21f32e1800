//! JSON wire protocol shared by all backends.
//!
//! ```text
//! POST {base}/v1/{separate|classify|generate|embed}
//!   {clip_id, role, prompt?, media_b64_or_url, params}
//!   -> {ok, result, model_id, latency_ms}
//! GET  {base}/v1/meta -> {role, model_id, embed_dim?}
//! ```
//!
//! `result` per operation:
//!
//! | op       | result                                   |
//! |----------|------------------------------------------|
//! | separate | `{"vocal": str, "accompaniment": str}`   |
//! | classify | `{"music_score": number in [0, 1]}`      |
//! | generate | `str` (may be empty)                     |
//! | embed    | `[number, ...]`                          |
//!
//! Text embeddings carry the text in `prompt` with `params.kind = "text"`;
//! audio embeddings carry the media in `media_b64_or_url` with
//! `params.kind = "audio"`.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Separate,
    Classify,
    Generate,
    Embed,
}

impl Op {
    pub fn path(self) -> &'static str {
        match self {
            Op::Separate => "separate",
            Op::Classify => "classify",
            Op::Generate => "generate",
            Op::Embed => "embed",
        }
    }

    pub fn from_path(s: &str) -> Option<Op> {
        [Op::Separate, Op::Classify, Op::Generate, Op::Embed]
            .into_iter()
            .find(|op| op.path() == s)
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.path())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub clip_id: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub media_b64_or_url: Option<String>,
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl WireRequest {
    /// Checks that the request is well formed for `op`.
    pub fn validate(&self, op: Op) -> Result<(), String> {
        if self.clip_id.is_empty() {
            return Err("clip_id is empty".into());
        }
        if self.role.op() != op {
            return Err(format!("role {} does not serve /v1/{}", self.role, op));
        }
        let has_media = self.media_b64_or_url.as_deref().is_some_and(|m| !m.is_empty());
        let has_prompt = self.prompt.as_deref().is_some_and(|p| !p.is_empty());
        match op {
            Op::Separate | Op::Classify if !has_media => Err(format!("{op} requires media")),
            Op::Generate if !has_prompt => Err("generate requires a non-empty prompt".into()),
            Op::Embed => match self.params.get("kind").and_then(Value::as_str) {
                Some("audio") if has_media => Ok(()),
                Some("text") if has_prompt => Ok(()),
                Some("audio") => Err("audio embedding requires media".into()),
                Some("text") => Err("text embedding requires a non-empty prompt".into()),
                _ => Err("embed requires params.kind of \"audio\" or \"text\"".into()),
            },
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub ok: bool,
    pub result: Value,
    pub model_id: String,
    pub latency_ms: u64,
}

impl WireResponse {
    /// Checks the `result` shape for `op`. Only meaningful when `ok`.
    pub fn validate(&self, op: Op) -> Result<(), String> {
        if !self.ok {
            return Ok(());
        }
        match op {
            Op::Separate => {
                let obj = self.result.as_object().ok_or("separate result must be an object")?;
                for key in ["vocal", "accompaniment"] {
                    if !obj.get(key).is_some_and(Value::is_string) {
                        return Err(format!("separate result missing string `{key}`"));
                    }
                }
                Ok(())
            }
            Op::Classify => {
                let score = self
                    .result
                    .get("music_score")
                    .and_then(Value::as_f64)
                    .ok_or("classify result missing numeric `music_score`")?;
                if (0.0..=1.0).contains(&score) {
                    Ok(())
                } else {
                    Err(format!("music_score {score} outside [0, 1]"))
                }
            }
            Op::Generate => self
                .result
                .is_string()
                .then_some(())
                .ok_or_else(|| "generate result must be a string".into()),
            Op::Embed => {
                let arr = self.result.as_array().ok_or("embed result must be an array")?;
                if arr.iter().all(|v| v.as_f64().is_some_and(f64::is_finite)) {
                    Ok(())
                } else {
                    Err("embed result must contain only finite numbers".into())
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendMeta {
    pub role: Role,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
}
