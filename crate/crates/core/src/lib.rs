//! Two-stage multimodal audio-captioning pipeline.
//!
//! Expert backends extract per-modality cues (general audio, speech, music,
//! video) for each clip, an LLM fuses them into a single audio caption, and
//! an audio/text embedding similarity filter calibrated against human labels
//! decides which captions are kept.
//!
//! The crate is organised by subsystem:
//!
//! * [`corpus`] - clip records, manifest ingestion, stage cache and shards.
//! * [`backends`] - wire protocol clients and deterministic mocks for the
//!   external model roles.
//! * [`pipeline`] - per-clip stage DAG, prompt assembly, fusion parsing,
//!   worker pool and resume.
//! * [`quality`] - annotation rubric math, agreement, F-beta threshold
//!   calibration.
//! * [`analytics`] - dataset statistics and embedding-space distances.
//! * [`retrieval`] - Recall@k evaluation over precomputed embeddings.

pub mod analytics;
pub mod backends;
pub mod corpus;
pub mod jsonl;
pub mod jsonx;
pub mod pipeline;
pub mod quality;
pub mod retrieval;
pub mod vector;

pub use corpus::{ClipRecord, CueBundle, FusedCaption, SimilarityScore, Stage, StageStatus, Tag};
pub use pipeline::{PipelineConfig, RunSummary};
