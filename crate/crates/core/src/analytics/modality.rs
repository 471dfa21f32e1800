use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::corpus::CueBundle;

const MODALITY_TEMPLATE: &str = include_str!("../../prompts/modality_check.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityKey {
    AudioCaption,
    SpeechCaption,
    MusicCaption,
    VideoCaption,
}

impl ModalityKey {
    pub const ALL: [ModalityKey; 4] = [
        ModalityKey::AudioCaption,
        ModalityKey::SpeechCaption,
        ModalityKey::MusicCaption,
        ModalityKey::VideoCaption,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModalityKey::AudioCaption => "audio_caption",
            ModalityKey::SpeechCaption => "speech_caption",
            ModalityKey::MusicCaption => "music_caption",
            ModalityKey::VideoCaption => "video_caption",
        }
    }
}

impl fmt::Display for ModalityKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityUsage {
    pub clip_id: String,
    pub used: BTreeSet<ModalityKey>,
}

/// Renders the modality-check prompt for one clip's cues and final caption.
pub fn render_modality_prompt(cues: &CueBundle, final_caption: &str) -> String {
    let s = |v: &Option<String>| v.clone().unwrap_or_default();
    let cap_str = serde_json::json!({
        "audio_caption": s(&cues.audio_caption),
        "speech_caption": s(&cues.speech_transcript),
        "music_caption": s(&cues.music_caption),
        "video_caption": s(&cues.video_caption),
        "final_cap": final_caption,
    });
    MODALITY_TEMPLATE.replace("{cap_str}", &cap_str.to_string())
}

/// Extracts the canonical caption keys mentioned anywhere in `raw`.
pub fn parse_modality_reply(clip_id: &str, raw: &str) -> Result<ModalityUsage, AnalyticsError> {
    let used: BTreeSet<ModalityKey> = ModalityKey::ALL
        .into_iter()
        .filter(|k| contains_token(raw, k.name()))
        .collect();
    if used.is_empty() {
        return Err(AnalyticsError::NoModalities(raw.to_owned()));
    }
    Ok(ModalityUsage {
        clip_id: clip_id.to_owned(),
        used,
    })
}

// Match `key` only where it is not part of a longer identifier.
fn contains_token(haystack: &str, key: &str) -> bool {
    let is_ident = |c: char| c.is_ascii_alphanumeric() || c == '_';
    haystack.match_indices(key).any(|(start, _)| {
        let before = haystack[..start].chars().next_back();
        let after = haystack[start + key.len()..].chars().next();
        !before.is_some_and(is_ident) && !after.is_some_and(is_ident)
    })
}

/// Fraction of clips whose final caption drew on two or more modalities.
pub fn multimodality_fraction(usages: &[ModalityUsage]) -> Result<f64, AnalyticsError> {
    if usages.is_empty() {
        return Err(AnalyticsError::Empty("multimodality fraction"));
    }
    let multi = usages.iter().filter(|u| u.used.len() >= 2).count();
    Ok(multi as f64 / usages.len() as f64)
}
