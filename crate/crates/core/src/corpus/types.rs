use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::vector;

/// One node of the per-clip stage DAG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Separate,
    Asr,
    AudioCap,
    MusicGate,
    MusicCap,
    VideoCap,
    Fuse,
    EmbedScore,
    Filter,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Separate,
        Stage::Asr,
        Stage::AudioCap,
        Stage::MusicGate,
        Stage::MusicCap,
        Stage::VideoCap,
        Stage::Fuse,
        Stage::EmbedScore,
        Stage::Filter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Separate => "separate",
            Stage::Asr => "asr",
            Stage::AudioCap => "audio_cap",
            Stage::MusicGate => "music_gate",
            Stage::MusicCap => "music_cap",
            Stage::VideoCap => "video_cap",
            Stage::Fuse => "fuse",
            Stage::EmbedScore => "embed_score",
            Stage::Filter => "filter",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|stage| stage.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Pending,
    Done,
    Failed,
    Skipped,
}

/// An AudioSet-style weak label with its confidence percentage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tag {
    pub label: String,
    pub confidence_pct: f64,
}

impl Tag {
    pub fn new(label: impl Into<String>, confidence_pct: f64) -> Self {
        Self {
            label: label.into(),
            confidence_pct,
        }
    }
}

/// One media item (nominally a 10 s clip) with its tags and per-stage status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub media_audio: PathBuf,
    pub media_video: Option<PathBuf>,
    pub duration_s: f64,
    pub tags: Vec<Tag>,
    pub stage_status: BTreeMap<Stage, StageStatus>,
}

impl ClipRecord {
    pub fn new(
        clip_id: impl Into<String>,
        media_audio: impl Into<PathBuf>,
        media_video: Option<PathBuf>,
        duration_s: f64,
        tags: Vec<Tag>,
    ) -> Result<Self, CorpusError> {
        let record = Self {
            clip_id: clip_id.into(),
            media_audio: media_audio.into(),
            media_video,
            duration_s,
            tags,
            stage_status: Stage::ALL.iter().map(|s| (*s, StageStatus::Pending)).collect(),
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |message: String| CorpusError::InvalidRecord {
            clip_id: self.clip_id.clone(),
            message,
        };
        if self.clip_id.is_empty() {
            return Err(invalid("clip_id is empty".into()));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(invalid(format!("duration_s must be > 0, got {}", self.duration_s)));
        }
        for tag in &self.tags {
            if !(0.0..=100.0).contains(&tag.confidence_pct) {
                return Err(invalid(format!(
                    "tag `{}` confidence {} outside [0, 100]",
                    tag.label, tag.confidence_pct
                )));
            }
        }
        Ok(())
    }

    pub fn status(&self, stage: Stage) -> StageStatus {
        self.stage_status.get(&stage).copied().unwrap_or(StageStatus::Pending)
    }

    pub fn set_status(&mut self, stage: Stage, status: StageStatus) {
        self.stage_status.insert(stage, status);
    }
}

/// The four extracted modality cues plus the rendered tag line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CueBundle {
    pub clip_id: String,
    pub audio_caption: Option<String>,
    pub speech_transcript: Option<String>,
    pub music_caption: Option<String>,
    pub video_caption: Option<String>,
    pub tag_line: String,
}

impl CueBundle {
    pub fn has_any_cue(&self) -> bool {
        [
            &self.audio_caption,
            &self.speech_transcript,
            &self.music_caption,
            &self.video_caption,
        ]
        .iter()
        .any(|c| c.as_deref().is_some_and(|s| !s.trim().is_empty()))
    }
}

/// Parsed fusion output: either a caption with ambiguities, or the
/// uncertainty sentinel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedCaption {
    pub clip_id: String,
    pub ambiguities: Vec<String>,
    pub caption: String,
    pub uncertain: bool,
}

impl FusedCaption {
    pub fn uncertain(clip_id: impl Into<String>) -> Self {
        Self {
            clip_id: clip_id.into(),
            ambiguities: Vec::new(),
            caption: String::new(),
            uncertain: true,
        }
    }

    /// Returns `None` when `caption` is blank.
    pub fn captioned(
        clip_id: impl Into<String>,
        ambiguities: Vec<String>,
        caption: impl Into<String>,
    ) -> Option<Self> {
        let caption = caption.into();
        if caption.trim().is_empty() {
            return None;
        }
        Some(Self {
            clip_id: clip_id.into(),
            ambiguities,
            caption,
            uncertain: false,
        })
    }
}

/// Audio/caption embedding agreement for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub clip_id: String,
    pub cosine: f64,
}

impl SimilarityScore {
    pub fn new(clip_id: impl Into<String>, cosine: f64) -> Self {
        Self {
            clip_id: clip_id.into(),
            cosine,
        }
    }

    /// Cosine of the two embeddings; `None` if either norm is zero or the
    /// dimensions disagree.
    pub fn from_embeddings(clip_id: impl Into<String>, audio: &[f64], text: &[f64]) -> Option<Self> {
        vector::cosine(audio, text).map(|cosine| Self::new(clip_id, cosine))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for stage in Stage::ALL {
            assert_eq!(stage.name().parse::<Stage>().unwrap(), stage);
            let json = serde_json::to_string(&stage).unwrap();
            assert_eq!(json, format!("\"{}\"", stage.name()));
        }
        assert!("mix".parse::<Stage>().is_err());
    }

    #[test]
    fn record_validation() {
        let ok = ClipRecord::new("a", "a.wav", None, 10.0, vec![Tag::new("Speech", 100.0)]).unwrap();
        assert!(ok.stage_status.values().all(|s| *s == StageStatus::Pending));
        assert!(ClipRecord::new("a", "a.wav", None, 0.0, vec![]).is_err());
        assert!(ClipRecord::new("a", "a.wav", None, 10.0, vec![Tag::new("X", 100.5)]).is_err());
        assert!(ClipRecord::new("a", "a.wav", None, 10.0, vec![Tag::new("X", -1.0)]).is_err());
    }

    #[test]
    fn fused_caption_invariants() {
        let u = FusedCaption::uncertain("c");
        assert!(u.uncertain && u.caption.is_empty() && u.ambiguities.is_empty());
        assert!(FusedCaption::captioned("c", vec![], "  ").is_none());
        assert!(!FusedCaption::captioned("c", vec![], "Rain.").unwrap().uncertain);
    }

    #[test]
    fn similarity_rejects_zero_norm() {
        assert!(SimilarityScore::from_embeddings("c", &[0.0, 0.0], &[1.0, 1.0]).is_none());
        let s = SimilarityScore::from_embeddings("c", &[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((s.cosine - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn cue_bundle_requires_a_cue() {
        let mut b = CueBundle::default();
        assert!(!b.has_any_cue());
        b.speech_transcript = Some("  ".into());
        assert!(!b.has_any_cue());
        b.video_caption = Some("00:01 - a dog".into());
        assert!(b.has_any_cue());
    }
}
