//! Domain types, manifest ingestion, and durable persistence for pipeline
//! stage outputs and finalized dataset shards.

mod cache;
mod manifest;
mod shard;
mod types;

pub use cache::{CacheKey, Fingerprint, StageCache};
pub use manifest::{load_manifest, render_tag_line, write_manifest, ManifestLine};
pub use shard::{read_shards, ShardRecord, ShardWriter};
pub use types::{ClipRecord, CueBundle, FusedCaption, SimilarityScore, Stage, StageStatus, Tag};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("manifest line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate clip_id `{clip_id}` on lines {first} and {second}")]
    DuplicateClip {
        clip_id: String,
        first: usize,
        second: usize,
    },
    #[error("clip `{clip_id}`: {message}")]
    InvalidRecord { clip_id: String, message: String },
    #[error("shard already contains clip `{0}`")]
    DuplicateShardRecord(String),
    #[error("storage failure at {path}: {source}")]
    Storage {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    /// Storage failures may succeed on retry; validation failures never do.
    pub fn is_retryable(&self) -> bool {
        matches!(self, CorpusError::Storage { .. })
    }

    pub(crate) fn storage(path: &std::path::Path, source: std::io::Error) -> Self {
        CorpusError::Storage {
            path: path.display().to_string(),
            source,
        }
    }
}
