use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ClipRecord, CorpusError, Tag};

/// On-disk shape of one manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLine {
    pub clip_id: String,
    pub audio_path: String,
    #[serde(default)]
    pub video_path: Option<String>,
    pub duration_s: f64,
    #[serde(default)]
    pub tags: Vec<Tag>,
}

impl From<&ClipRecord> for ManifestLine {
    fn from(r: &ClipRecord) -> Self {
        Self {
            clip_id: r.clip_id.clone(),
            audio_path: r.media_audio.to_string_lossy().into_owned(),
            video_path: r.media_video.as_ref().map(|p| p.to_string_lossy().into_owned()),
            duration_s: r.duration_s,
            tags: r.tags.clone(),
        }
    }
}

/// Loads a line-delimited JSON manifest. Blank lines are ignored; every
/// other line must be a complete record. All stages start out pending.
pub fn load_manifest(path: &Path) -> Result<Vec<ClipRecord>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::storage(path, e))?;
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let line: ManifestLine = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(&first) = seen.get(&line.clip_id) {
            return Err(CorpusError::DuplicateClip {
                clip_id: line.clip_id,
                first,
                second: line_no,
            });
        }
        let record = ClipRecord::new(
            line.clip_id.clone(),
            PathBuf::from(line.audio_path),
            line.video_path.map(PathBuf::from),
            line.duration_s,
            line.tags,
        )
        .map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        seen.insert(line.clip_id, line_no);
        records.push(record);
    }
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[ClipRecord]) -> Result<(), CorpusError> {
    let lines: Vec<ManifestLine> = records.iter().map(ManifestLine::from).collect();
    fs::write(path, crate::jsonl::to_bytes(&lines)).map_err(|e| CorpusError::storage(path, e))
}

/// Renders tags as `Label(P%)` entries joined by `", "`, in input order.
pub fn render_tag_line(tags: &[Tag]) -> String {
    tags.iter()
        .map(|t| format!("{}({}%)", t.label, t.confidence_pct))
        .collect::<Vec<_>>()
        .join(", ")
}
