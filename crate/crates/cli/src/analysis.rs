use std::collections::BTreeMap;

use anyhow::{bail, Context};
use capfuse_core::analytics::{
    cluster_distances, length_histogram, multimodality_fraction, object_presence, parse_modality_reply,
    render_extraction_prompt, render_modality_prompt, score_histogram, validate_semantic_extraction, ClusterOptions,
    Histogram, LengthStats, ObjectPresence,
};
use capfuse_core::backends::{BackendClient, Role};
use capfuse_core::corpus::{read_shards, ShardRecord, SimilarityScore};
use capfuse_core::jsonl;
use capfuse_core::pipeline::{Backends, PipelineConfig};
use capfuse_core::retrieval::{evaluate, EmbeddingLine, TruthLine};
use serde::{Deserialize, Serialize};

use crate::{DistancesArgs, RetrievalArgs, StatsArgs};

#[derive(Debug, Serialize)]
struct ModalityStats {
    clips: usize,
    failed: usize,
    multimodal_fraction: f64,
    key_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Serialize)]
struct SemanticStats {
    clips: usize,
    failed: usize,
    dropped_terms: usize,
    presence: ObjectPresence,
}

#[derive(Debug, Serialize)]
struct DatasetStats {
    records: usize,
    kept: usize,
    filtered: usize,
    filter_rate: f64,
    /// Token lengths of kept captions.
    lengths: LengthStats,
    /// Similarity scores of every scored record.
    scores: Histogram,
    #[serde(skip_serializing_if = "Option::is_none")]
    modality: Option<ModalityStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    semantic: Option<SemanticStats>,
}

/// Applies `f` to every kept record on `workers` threads, in input order.
fn fan_out<T: Send>(records: &[&ShardRecord], workers: usize, f: impl Fn(&ShardRecord) -> T + Sync) -> Vec<T> {
    let chunk = records.len().div_ceil(workers.max(1)).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = records
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(|r| f(r)).collect::<Vec<T>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

fn modality_pass(kept: &[&ShardRecord], synth: &BackendClient, workers: usize) -> anyhow::Result<ModalityStats> {
    let replies = fan_out(kept, workers, |r| {
        let prompt = render_modality_prompt(&r.cue_bundle, &r.caption);
        let raw = synth.generate_text(&r.clip_id, &prompt, None).map_err(|e| e.to_string())?;
        parse_modality_reply(&r.clip_id, &raw).map_err(|e| e.to_string())
    });
    let mut usages = Vec::new();
    let mut failed = 0;
    for (r, reply) in kept.iter().zip(replies) {
        match reply {
            Ok(u) => usages.push(u),
            Err(e) => {
                tracing::warn!(clip_id = %r.clip_id, error = %e, "modality check failed");
                failed += 1;
            }
        }
    }
    let mut key_counts = BTreeMap::new();
    for key in usages.iter().flat_map(|u| &u.used) {
        *key_counts.entry(key.name().to_owned()).or_default() += 1;
    }
    Ok(ModalityStats {
        clips: usages.len(),
        failed,
        multimodal_fraction: multimodality_fraction(&usages)?,
        key_counts,
    })
}

fn semantic_pass(kept: &[&ShardRecord], synth: &BackendClient, workers: usize) -> anyhow::Result<SemanticStats> {
    let replies = fan_out(kept, workers, |r| {
        let raw = synth
            .generate_text(&r.clip_id, &render_extraction_prompt(&r.caption), None)
            .map_err(|e| e.to_string())?;
        validate_semantic_extraction(&r.clip_id, &r.caption, &raw).map_err(|e| e.to_string())
    });
    let mut extractions = Vec::new();
    let (mut failed, mut dropped) = (0, 0);
    for (r, reply) in kept.iter().zip(replies) {
        match reply {
            Ok(v) => {
                dropped += v.dropped;
                extractions.push(v.extraction);
            }
            Err(e) => {
                tracing::warn!(clip_id = %r.clip_id, error = %e, "semantic extraction failed");
                failed += 1;
            }
        }
    }
    Ok(SemanticStats {
        clips: extractions.len(),
        failed,
        dropped_terms: dropped,
        presence: object_presence(&extractions)?,
    })
}

pub fn stats(args: StatsArgs) -> anyhow::Result<()> {
    let records = read_shards(&args.shards)?;
    let kept: Vec<&ShardRecord> = records.iter().filter(|r| r.kept).collect();
    let captions: Vec<&str> = kept.iter().map(|r| r.caption.as_str()).collect();
    let scores: Vec<SimilarityScore> = records.iter().map(|r| SimilarityScore::new(&r.clip_id, r.cosine)).collect();
    let filtered = records.len() - kept.len();

    let mut stats = DatasetStats {
        records: records.len(),
        kept: kept.len(),
        filtered,
        filter_rate: if records.is_empty() { 0.0 } else { filtered as f64 / records.len() as f64 },
        lengths: length_histogram(&captions, args.length_bins)?,
        scores: score_histogram(&scores, args.score_width)?,
        modality: None,
        semantic: None,
    };
    if args.with_modality || args.with_semantic {
        if kept.is_empty() {
            bail!("no kept records in {}", args.shards.display());
        }
        let config = match &args.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        let workers = config.pool.workers;
        let backends = Backends::from_config(&config)?;
        let synth = backends.client(Role::Synthesizer);
        if args.with_modality {
            stats.modality = Some(modality_pass(&kept, synth, workers)?);
        }
        if args.with_semantic {
            stats.semantic = Some(semantic_pass(&kept, synth, workers)?);
        }
    }
    crate::emit_json(&stats, Some(&args.out))
}

#[derive(Debug, Deserialize)]
struct CategoryLine {
    clip_id: String,
    category: String,
}

pub fn distances(args: DistancesArgs) -> anyhow::Result<()> {
    let mut embeddings = BTreeMap::new();
    for line in jsonl::read::<EmbeddingLine>(&args.embeddings)? {
        if embeddings.insert(line.id.clone(), line.vector).is_some() {
            bail!("{}: duplicate id `{}`", args.embeddings.display(), line.id);
        }
    }
    let mut labels = BTreeMap::new();
    for line in jsonl::read::<CategoryLine>(&args.labels)? {
        if labels.insert(line.clip_id.clone(), line.category).is_some() {
            bail!("{}: duplicate clip_id `{}`", args.labels.display(), line.clip_id);
        }
    }
    let opts = ClusterOptions {
        mode: args.mode,
        cap_per_category: args.cap,
        seed: args.seed,
    };
    let report = cluster_distances(&embeddings, &labels, &opts).context("computing distances")?;
    for (category, d) in &report.intra {
        if d.distance.is_none() {
            tracing::warn!(%category, members = d.members, "intra distance needs at least two members");
        }
    }
    crate::emit_json(&report, args.out.as_deref())
}

pub fn eval_retrieval(args: RetrievalArgs) -> anyhow::Result<()> {
    let queries: Vec<EmbeddingLine> = jsonl::read(&args.queries)?;
    let candidates: Vec<EmbeddingLine> = jsonl::read(&args.candidates)?;
    let truth: Vec<TruthLine> = jsonl::read(&args.truth)?;
    let report = evaluate(&queries, &candidates, &truth, &args.k, args.both_directions)?;
    crate::emit_json(&report, args.out.as_deref())
}
