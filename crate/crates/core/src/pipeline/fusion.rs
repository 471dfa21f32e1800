use crate::corpus::{FusedCaption, SimilarityScore};
use crate::jsonx;

/// The fusion model's "cannot caption reliably" answer.
pub const SENTINEL: &str = "UNCERTAIN_AUDIO_INFORMATION_DETECTED";

const AMBIGUITIES_KEY: &str = "Potential ambiguities";
const CAPTION_KEY: &str = "Audio caption";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error("no JSON object in fusion output: {excerpt:?}")]
    Parse { excerpt: String },
    #[error("fusion output violates schema: {message}")]
    Schema { message: String },
}

fn excerpt(raw: &str) -> String {
    const MAX: usize = 120;
    match raw.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &raw[..i]),
        None => raw.to_owned(),
    }
}

/// Parses the fusion model's reply: the bare sentinel, or the first JSON
/// object carrying both output keys (fences and surrounding prose allowed).
pub fn parse_fusion_output(clip_id: &str, raw: &str) -> Result<FusedCaption, FusionError> {
    let body = jsonx::strip_fences(raw).trim();
    if body == SENTINEL {
        return Ok(FusedCaption::uncertain(clip_id));
    }
    let obj = jsonx::first_json_object(body).ok_or_else(|| FusionError::Parse { excerpt: excerpt(raw) })?;
    let schema = |message: String| FusionError::Schema { message };
    let ambiguities = match obj.get(AMBIGUITIES_KEY) {
        Some(serde_json::Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_owned)
                    .ok_or_else(|| schema(format!("`{AMBIGUITIES_KEY}` must contain only strings")))
            })
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(schema(format!("`{AMBIGUITIES_KEY}` must be a list"))),
        None => return Err(schema(format!("missing `{AMBIGUITIES_KEY}`"))),
    };
    let caption = match obj.get(CAPTION_KEY) {
        Some(serde_json::Value::String(s)) => s.trim(),
        Some(_) => return Err(schema(format!("`{CAPTION_KEY}` must be a string"))),
        None => return Err(schema(format!("missing `{CAPTION_KEY}`"))),
    };
    FusedCaption::captioned(clip_id, ambiguities, caption).ok_or_else(|| schema(format!("`{CAPTION_KEY}` is empty")))
}

/// Keep a caption iff its audio/text cosine reaches `threshold`.
pub fn apply_filter(score: &SimilarityScore, threshold: f64) -> bool {
    score.cosine >= threshold
}
