#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use capfuse_core::backends::{EmbedKind, MockBackend, Role};
use capfuse_core::corpus::{ClipRecord, Tag};
use capfuse_core::pipeline::{Backends, Pipeline, PipelineConfig, RunOptions, RunSummary, SENTINEL};

pub const CLIPS: usize = 50;
pub const SENTINEL_CLIP: &str = "clip-007";
pub const GATE_BOUNDARY_CLIP: &str = "clip-010";

pub fn clip_id(i: usize) -> String {
    format!("clip-{i:03}")
}

/// Gate is off for every third clip.
pub fn gate_off(i: usize) -> bool {
    i.is_multiple_of(3)
}

/// Clips whose audio and text embeddings are orthogonal.
pub fn low_similarity(i: usize) -> bool {
    i % 11 == 4
}

pub fn has_video(i: usize) -> bool {
    i % 17 != 5
}

/// Media files plus clip records for `n` clips.
pub fn records(dir: &Path, n: usize, video: impl Fn(usize) -> bool) -> Vec<ClipRecord> {
    let media = dir.join("media");
    std::fs::create_dir_all(&media).unwrap();
    (0..n)
        .map(|i| {
            let id = clip_id(i);
            let audio = media.join(format!("{id}.wav"));
            std::fs::write(&audio, format!("audio {id}")).unwrap();
            let video_path = video(i).then(|| {
                let p = media.join(format!("{id}.mp4"));
                std::fs::write(&p, format!("video {id}")).unwrap();
                p
            });
            let mut tags = vec![Tag::new("Speech", 100.0)];
            if !gate_off(i) {
                tags.push(Tag::new("Music", 87.5));
            }
            ClipRecord::new(id, audio, video_path, 10.0, tags).unwrap()
        })
        .collect()
}

/// A seeded mock with the fixture's gate scores, embeddings and sentinel.
pub fn mock(seed: u64) -> Arc<MockBackend> {
    let m = MockBackend::new(seed).with_embed_dim(16);
    for i in 0..CLIPS {
        let id = clip_id(i);
        m.set_music_score(&id, if gate_off(i) { 0.0 } else { 0.9 });
        if low_similarity(i) {
            let mut a = vec![0.0; 16];
            let mut t = vec![0.0; 16];
            a[0] = 1.0;
            t[1] = 1.0;
            m.set_embedding(&id, EmbedKind::Audio, a);
            m.set_embedding(&id, EmbedKind::Text, t);
        }
    }
    m.set_music_score(GATE_BOUNDARY_CLIP, 0.5);
    m.set_text(Role::Synthesizer, SENTINEL_CLIP, SENTINEL);
    Arc::new(m)
}

pub fn config() -> PipelineConfig {
    let mut c = PipelineConfig {
        shard_size: 16,
        ..PipelineConfig::default()
    };
    for ep in c.endpoints.values_mut() {
        ep.backoff_base_ms = 1;
    }
    c
}

pub fn run(
    records: &[ClipRecord],
    mock: &Arc<MockBackend>,
    config: &PipelineConfig,
    out: &Path,
    opts: &RunOptions,
) -> RunSummary {
    let backends = Backends::with_mock(config, mock.clone());
    let mut p = Pipeline::open(config.clone(), backends, out).unwrap();
    p.run(records, out, opts).unwrap()
}

/// Concatenated shard bytes in file order.
pub fn shard_bytes(out: &Path) -> Vec<u8> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(out.join("shards"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    let mut bytes = Vec::new();
    for f in files {
        bytes.extend(f.file_name().unwrap().to_string_lossy().as_bytes());
        bytes.push(0);
        bytes.extend(std::fs::read(f).unwrap());
    }
    bytes
}

pub fn resume() -> RunOptions {
    RunOptions {
        resume: true,
        ..RunOptions::default()
    }
}
