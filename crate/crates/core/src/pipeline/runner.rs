use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::MusicInput;
use super::fusion::{apply_filter, parse_fusion_output};
use super::prompt::{FusionPromptInputs, Prompts};
use super::{Backends, PipelineConfig, PipelineError, StagePlan};
use crate::backends::{BackendClient, EmbedKind, GateResult, MediaRef, Role};
use crate::corpus::{
    render_tag_line, ClipRecord, CueBundle, Fingerprint, FusedCaption, ShardRecord, ShardWriter, SimilarityScore,
    Stage, StageCache, StageStatus,
};
use crate::jsonl;

pub const SHARDS_DIR: &str = "shards";
pub const CACHE_DIR: &str = "cache";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const CLIPS_FILE: &str = "clips.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Allow `out` to hold an earlier, possibly partial, run.
    pub resume: bool,
    /// Process only the first `n` manifest entries.
    pub limit: Option<usize>,
    /// Stop every clip after this stage and write no outputs, as if the
    /// process had been killed there. Completed stages stay cached.
    pub stop_after: Option<Stage>,
    pub progress: Option<Arc<RunProgress>>,
}

/// Live counters for callers that poll a running job.
#[derive(Debug, Default)]
pub struct RunProgress {
    pub total: AtomicUsize,
    pub completed: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipVerdict {
    Kept,
    Filtered,
    /// The fusion model returned the uncertainty sentinel.
    Uncertain,
    Failed,
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub clip_id: String,
    pub stage: Stage,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipResult {
    pub clip: ClipRecord,
    pub verdict: ClipVerdict,
    pub cues: CueBundle,
    pub fused: Option<FusedCaption>,
    pub score: Option<SimilarityScore>,
    pub failure: Option<FailureReport>,
    /// Stages whose result came from a backend rather than the cache.
    pub executed: Vec<Stage>,
    pub cache_hits: usize,
}

impl ClipResult {
    pub fn shard_record(&self) -> Option<ShardRecord> {
        let kept = match self.verdict {
            ClipVerdict::Kept => true,
            ClipVerdict::Filtered => false,
            _ => return None,
        };
        let fused = self.fused.as_ref()?;
        Some(ShardRecord {
            clip_id: self.clip.clip_id.clone(),
            caption: fused.caption.clone(),
            ambiguities: fused.ambiguities.clone(),
            cosine: self.score.as_ref()?.cosine,
            kept,
            cue_bundle: self.cues.clone(),
        })
    }

    pub fn status_line(&self) -> ClipStatusLine {
        ClipStatusLine {
            clip_id: self.clip.clip_id.clone(),
            verdict: self.verdict,
            stage_status: self.clip.stage_status.clone(),
            caption: self.fused.as_ref().filter(|f| !f.uncertain).map(|f| f.caption.clone()),
            cosine: self.score.as_ref().map(|s| s.cosine),
            error: self.failure.as_ref().map(|f| format!("{}: {}", f.stage, f.error)),
        }
    }
}

/// One line of `clips.jsonl`: where each clip ended up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipStatusLine {
    pub clip_id: String,
    pub verdict: ClipVerdict,
    pub stage_status: BTreeMap<Stage, StageStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cosine: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub ingested: usize,
    /// Clips that received a caption (sentinel replies excluded).
    pub fused: usize,
    pub uncertain: usize,
    pub failed: usize,
    pub kept: usize,
    pub filtered: usize,
    /// `filtered / (kept + filtered)`; sentinel drops are not counted.
    pub filter_rate: f64,
    #[serde(skip)]
    pub interrupted: usize,
    #[serde(skip)]
    pub stages_executed: BTreeMap<Stage, usize>,
    #[serde(skip)]
    pub cache_hits: usize,
}

impl RunSummary {
    fn from_results(results: &[ClipResult]) -> Self {
        let mut s = Self {
            ingested: results.len(),
            ..Self::default()
        };
        for r in results {
            match r.verdict {
                ClipVerdict::Kept => s.kept += 1,
                ClipVerdict::Filtered => s.filtered += 1,
                ClipVerdict::Uncertain => s.uncertain += 1,
                ClipVerdict::Failed => s.failed += 1,
                ClipVerdict::Interrupted => s.interrupted += 1,
            }
            if r.fused.as_ref().is_some_and(|f| !f.uncertain) {
                s.fused += 1;
            }
            for stage in &r.executed {
                *s.stages_executed.entry(*stage).or_default() += 1;
            }
            s.cache_hits += r.cache_hits;
        }
        let scored = s.kept + s.filtered;
        s.filter_rate = if scored == 0 { 0.0 } else { s.filtered as f64 / scored as f64 };
        s
    }

    pub fn executed(&self, stage: Stage) -> usize {
        self.stages_executed.get(&stage).copied().unwrap_or(0)
    }
}

#[derive(Debug)]
struct StageFailure {
    stage: Stage,
    error: String,
}

impl StageFailure {
    fn new(stage: Stage, error: impl ToString) -> Self {
        Self {
            stage,
            error: error.to_string(),
        }
    }
}

// Early exits from a clip's stage sequence.
#[derive(Debug)]
enum Halt {
    Failed(StageFailure),
    Interrupted,
}

impl From<StageFailure> for Halt {
    fn from(f: StageFailure) -> Self {
        Halt::Failed(f)
    }
}

struct ClipCtx<'a> {
    clip_id: &'a str,
    deadline: Instant,
    executed: Mutex<Vec<Stage>>,
    hits: AtomicUsize,
    status: Mutex<BTreeMap<Stage, StageStatus>>,
}

impl ClipCtx<'_> {
    fn set(&self, stage: Stage, status: StageStatus) {
        self.status.lock().unwrap().insert(stage, status);
    }
}

/// Runs the stage DAG for a batch of clips.
pub struct Pipeline {
    config: PipelineConfig,
    prompts: Prompts,
    plan: StagePlan,
    backends: Backends,
    cache: StageCache,
    stop_after: Option<Stage>,
}

impl Pipeline {
    /// Opens (or creates) the stage cache at `cache_dir`.
    pub fn new(config: PipelineConfig, backends: Backends, cache_dir: &Path) -> Result<Self, PipelineError> {
        config.validate()?;
        let prompts = config.load_prompts()?;
        Ok(Self {
            config,
            prompts,
            plan: StagePlan::standard(),
            backends,
            cache: StageCache::open(cache_dir)?,
            stop_after: None,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn cache(&self) -> &StageCache {
        &self.cache
    }

    fn allowed(&self, stage: Stage) -> bool {
        match self.stop_after {
            None => true,
            Some(stop) => {
                let order = self.plan.topological_order();
                let pos = |s| order.iter().position(|x| *x == s).expect("stage in plan");
                pos(stage) <= pos(stop)
            }
        }
    }

    /// Processes `records` with the worker pool and writes shards, the
    /// failure report, per-clip status and the summary under `out`.
    pub fn run(&mut self, records: &[ClipRecord], out: &Path, opts: &RunOptions) -> Result<RunSummary, PipelineError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| PipelineError::Io { path, source }
        };
        if !opts.resume && out.join(SUMMARY_FILE).exists() {
            return Err(PipelineError::RunExists(out.to_path_buf()));
        }
        std::fs::create_dir_all(out).map_err(io(out))?;
        self.stop_after = opts.stop_after;

        let records = &records[..opts.limit.unwrap_or(records.len()).min(records.len())];
        let results = self.run_all(records, opts.progress.as_deref());
        let summary = RunSummary::from_results(&results);
        if summary.interrupted > 0 {
            return Ok(summary);
        }

        let mut writer = ShardWriter::create(out.join(SHARDS_DIR), self.config.shard_size)?;
        for record in results.iter().filter_map(ClipResult::shard_record) {
            writer.append(&record)?;
        }
        writer.finish()?;
        let failures: Vec<&FailureReport> = results.iter().filter_map(|r| r.failure.as_ref()).collect();
        jsonl::write(&out.join(FAILURES_FILE), &failures)?;
        let lines: Vec<ClipStatusLine> = results.iter().map(ClipResult::status_line).collect();
        jsonl::write(&out.join(CLIPS_FILE), &lines)?;

        let path = out.join(SUMMARY_FILE);
        let tmp = out.join(format!("{SUMMARY_FILE}.tmp"));
        let mut body = serde_json::to_vec_pretty(&summary).expect("summary serialises");
        body.push(b'\n');
        std::fs::write(&tmp, body).map_err(io(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io(&path))?;
        tracing::info!(
            ingested = summary.ingested,
            kept = summary.kept,
            filtered = summary.filtered,
            uncertain = summary.uncertain,
            failed = summary.failed,
            "run complete"
        );
        Ok(summary)
    }

    fn run_all(&self, records: &[ClipRecord], progress: Option<&RunProgress>) -> Vec<ClipResult> {
        if let Some(p) = progress {
            p.total.store(records.len(), Ordering::Relaxed);
        }
        let slots: Vec<Mutex<Option<ClipResult>>> = records.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.config.pool.workers.min(records.len()).max(1);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(record) = records.get(i) else { break };
                    let result = self.run_clip(record);
                    *slots[i].lock().unwrap() = Some(result);
                    if let Some(p) = progress {
                        p.completed.fetch_add(1, Ordering::Relaxed);
                    }
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("every clip processed"))
            .collect()
    }

    /// Runs every stage for one clip, using cached results where the
    /// stage fingerprint matches.
    pub fn run_clip(&self, record: &ClipRecord) -> ClipResult {
        let ctx = ClipCtx {
            clip_id: &record.clip_id,
            deadline: Instant::now() + Duration::from_secs_f64(self.config.pool.clip_deadline_s),
            executed: Mutex::new(Vec::new()),
            hits: AtomicUsize::new(0),
            status: Mutex::new(record.stage_status.clone()),
        };
        let mut cues = CueBundle {
            clip_id: record.clip_id.clone(),
            tag_line: render_tag_line(&record.tags),
            ..CueBundle::default()
        };
        let mut fused = None;
        let mut score = None;
        let outcome = self.stages(record, &ctx, &mut cues, &mut fused, &mut score);

        let (verdict, failure) = match outcome {
            Ok(v) => (v, None),
            Err(Halt::Interrupted) => (ClipVerdict::Interrupted, None),
            Err(Halt::Failed(f)) => {
                tracing::warn!(clip_id = %record.clip_id, stage = %f.stage, error = %f.error, "clip failed");
                ctx.set(f.stage, StageStatus::Failed);
                let report = FailureReport {
                    clip_id: record.clip_id.clone(),
                    stage: f.stage,
                    error: f.error,
                };
                (ClipVerdict::Failed, Some(report))
            }
        };
        let mut clip = record.clone();
        clip.stage_status = ctx.status.into_inner().unwrap();
        let mut executed = ctx.executed.into_inner().unwrap();
        executed.sort();
        ClipResult {
            clip,
            verdict,
            cues,
            fused,
            score,
            failure,
            executed,
            cache_hits: ctx.hits.into_inner(),
        }
    }

    fn stages(
        &self,
        record: &ClipRecord,
        ctx: &ClipCtx<'_>,
        cues: &mut CueBundle,
        fused_out: &mut Option<FusedCaption>,
        score_out: &mut Option<SimilarityScore>,
    ) -> Result<ClipVerdict, Halt> {
        let audio = MediaRef::new(record.media_audio.display().to_string());
        if self.config.check_media_exists && !record.media_audio.exists() {
            return Err(StageFailure::new(Stage::Separate, format!("audio file not found: {audio}")).into());
        }

        // Separation.
        let sep = self.client(Role::Separator);
        let (vocal, accompaniment): (MediaRef, MediaRef) = self.cached(ctx, Stage::Separate, &[&sep.identity(), audio.as_str()], || {
            Ok(sep.separate(ctx.clip_id, &audio)?)
        })?;

        // Cue extraction; the four branches run concurrently.
        let music_media = match self.config.music_input {
            MusicInput::Accompaniment => accompaniment.clone(),
            MusicInput::Original => audio.clone(),
        };
        let (asr, audio_cap, music, video) = std::thread::scope(|s| {
            let asr = s.spawn(|| self.text_stage(ctx, Stage::Asr, Role::Asr, &self.prompts.asr.text, &self.prompts.asr.hash, &vocal));
            let audio_cap = s.spawn(|| {
                self.text_stage(ctx, Stage::AudioCap, Role::AudioCaptioner, &self.prompts.audio_caption.text, &self.prompts.audio_caption.hash, &audio)
            });
            let music = s.spawn(|| self.music_branch(ctx, &audio, &music_media));
            let video = self.video_branch(ctx, record);
            (asr.join().expect("asr thread"), audio_cap.join().expect("audio thread"), music.join().expect("music thread"), video)
        });
        // Report the earliest failing stage so failure reports are stable.
        let mut branch_results = [asr.map(|t| (Stage::Asr, Some(t))), audio_cap.map(|t| (Stage::AudioCap, Some(t))), music.map(|t| (Stage::MusicCap, t)), video.map(|t| (Stage::VideoCap, t))];
        let mut interrupted = false;
        let mut first_failure: Option<StageFailure> = None;
        for r in &mut branch_results {
            if let Err(h) = r {
                match std::mem::replace(h, Halt::Interrupted) {
                    Halt::Interrupted => interrupted = true,
                    Halt::Failed(f) => {
                        let order = self.plan.topological_order();
                        let pos = |s: Stage| order.iter().position(|x| *x == s);
                        if first_failure.as_ref().is_none_or(|g| pos(f.stage) < pos(g.stage)) {
                            first_failure = Some(f);
                        }
                    }
                }
            }
        }
        if let Some(f) = first_failure {
            return Err(f.into());
        }
        if interrupted {
            return Err(Halt::Interrupted);
        }
        for (stage, text) in branch_results.into_iter().map(|r| r.expect("checked above")) {
            match stage {
                Stage::Asr => cues.speech_transcript = text,
                Stage::AudioCap => cues.audio_caption = text,
                Stage::MusicCap => cues.music_caption = text,
                Stage::VideoCap => cues.video_caption = text,
                _ => unreachable!(),
            }
        }

        // Fusion.
        let synth = self.client(Role::Synthesizer);
        let prompt = self.prompts.fusion.render(&FusionPromptInputs::from_cues(cues));
        let prompt_digest = hex::encode(Sha256::digest(prompt.as_bytes()));
        let fp = self.fingerprint(Stage::Fuse, &[&synth.identity(), &prompt_digest]);
        let fused = match self.cache_get::<String>(ctx, Stage::Fuse, &fp)? {
            Some(raw) => parse_fusion_output(ctx.clip_id, &raw).map_err(|e| StageFailure::new(Stage::Fuse, e))?,
            None => {
                self.begin(ctx, Stage::Fuse)?;
                let raw = synth
                    .generate_text(ctx.clip_id, &prompt, Some(&audio))
                    .map_err(|e| StageFailure::new(Stage::Fuse, e))?;
                // Unparseable replies are not cached, so a resume retries them.
                let parsed = parse_fusion_output(ctx.clip_id, &raw).map_err(|e| StageFailure::new(Stage::Fuse, e))?;
                self.cache_put(ctx, Stage::Fuse, &fp, &raw)?;
                parsed
            }
        };
        ctx.set(Stage::Fuse, StageStatus::Done);
        let uncertain = fused.uncertain;
        let caption = fused.caption.clone();
        *fused_out = Some(fused);
        if uncertain {
            ctx.set(Stage::EmbedScore, StageStatus::Skipped);
            ctx.set(Stage::Filter, StageStatus::Skipped);
            return Ok(ClipVerdict::Uncertain);
        }

        // Embedding and scoring.
        let embedder = self.client(Role::Embedder);
        let cosine: f64 = self.cached(ctx, Stage::EmbedScore, &[&embedder.identity(), audio.as_str(), &caption], || {
            let a = embedder.embed(ctx.clip_id, EmbedKind::Audio, audio.as_str())?;
            let t = embedder.embed(ctx.clip_id, EmbedKind::Text, &caption)?;
            SimilarityScore::from_embeddings(ctx.clip_id, &a, &t)
                .map(|s| s.cosine)
                .ok_or_else(|| StageError::Invalid("embedding has zero norm or mismatched dimension".into()))
        })?;
        let score = SimilarityScore::new(ctx.clip_id, cosine);

        self.begin(ctx, Stage::Filter)?;
        let kept = apply_filter(&score, self.config.filter_threshold);
        ctx.set(Stage::Filter, StageStatus::Done);
        *score_out = Some(score);
        Ok(if kept { ClipVerdict::Kept } else { ClipVerdict::Filtered })
    }

    fn music_branch(&self, ctx: &ClipCtx<'_>, audio: &MediaRef, music_media: &MediaRef) -> Result<Option<String>, Halt> {
        let gate = self.client(Role::MusicGate);
        let music_score: f64 = self.cached(ctx, Stage::MusicGate, &[&gate.identity(), audio.as_str()], || {
            Ok(gate.classify_music(ctx.clip_id, audio, self.config.gate_threshold)?.music_score)
        })?;
        if !GateResult::evaluate(music_score, self.config.gate_threshold).passed {
            ctx.set(Stage::MusicCap, StageStatus::Skipped);
            return Ok(None);
        }
        let p = &self.prompts.music_caption;
        self.text_stage(ctx, Stage::MusicCap, Role::MusicCaptioner, &p.text, &p.hash, music_media)
            .map(Some)
    }

    fn video_branch(&self, ctx: &ClipCtx<'_>, record: &ClipRecord) -> Result<Option<String>, Halt> {
        let Some(video) = &record.media_video else {
            ctx.set(Stage::VideoCap, StageStatus::Skipped);
            return Ok(None);
        };
        if self.config.check_media_exists && !video.exists() {
            return Err(StageFailure::new(Stage::VideoCap, format!("video file not found: {}", video.display())).into());
        }
        let media = MediaRef::new(video.display().to_string());
        let p = &self.prompts.video_caption;
        self.text_stage(ctx, Stage::VideoCap, Role::VideoCaptioner, &p.text, &p.hash, &media)
            .map(Some)
    }

    fn text_stage(
        &self,
        ctx: &ClipCtx<'_>,
        stage: Stage,
        role: Role,
        prompt: &str,
        prompt_hash: &str,
        media: &MediaRef,
    ) -> Result<String, Halt> {
        let client = self.client(role);
        self.cached(ctx, stage, &[&client.identity(), prompt_hash, media.as_str()], || {
            Ok(client.generate_text(ctx.clip_id, prompt, Some(media))?)
        })
    }

    fn client(&self, role: Role) -> &BackendClient {
        self.backends.client(role)
    }

    fn fingerprint(&self, stage: Stage, parts: &[&str]) -> Fingerprint {
        Fingerprint::of(std::iter::once(stage.name()).chain(parts.iter().copied()))
    }

    // Checks the deadline and the simulated kill point before a stage runs.
    fn begin(&self, ctx: &ClipCtx<'_>, stage: Stage) -> Result<(), Halt> {
        if !self.allowed(stage) {
            return Err(Halt::Interrupted);
        }
        if Instant::now() > ctx.deadline {
            return Err(StageFailure::new(stage, "clip deadline exceeded").into());
        }
        Ok(())
    }

    fn cache_get<T: DeserializeOwned>(&self, ctx: &ClipCtx<'_>, stage: Stage, fp: &Fingerprint) -> Result<Option<T>, Halt> {
        if !self.allowed(stage) {
            return Err(Halt::Interrupted);
        }
        let bytes = self
            .cache
            .get_stage_result(ctx.clip_id, stage, fp)
            .map_err(|e| StageFailure::new(stage, e))?;
        // An entry that no longer decodes is treated as missing.
        let value = bytes.and_then(|b| serde_json::from_slice(&b).ok());
        if value.is_some() {
            ctx.hits.fetch_add(1, Ordering::Relaxed);
        }
        Ok(value)
    }

    fn cache_put<T: Serialize>(&self, ctx: &ClipCtx<'_>, stage: Stage, fp: &Fingerprint, value: &T) -> Result<(), Halt> {
        ctx.executed.lock().unwrap().push(stage);
        let payload = serde_json::to_vec(value).expect("stage output serialises");
        self.cache
            .put_stage_result(ctx.clip_id, stage, &payload, fp)
            .map_err(|e| StageFailure::new(stage, e))?;
        Ok(())
    }

    /// Returns the cached result for `stage` or computes and caches it.
    fn cached<T, F>(&self, ctx: &ClipCtx<'_>, stage: Stage, parts: &[&str], compute: F) -> Result<T, Halt>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T, StageError>,
    {
        let fp = self.fingerprint(stage, parts);
        let value = match self.cache_get(ctx, stage, &fp)? {
            Some(v) => v,
            None => {
                self.begin(ctx, stage)?;
                let v = compute().map_err(|e| StageFailure::new(stage, e))?;
                self.cache_put(ctx, stage, &fp, &v)?;
                v
            }
        };
        ctx.set(stage, StageStatus::Done);
        Ok(value)
    }
}

#[derive(Debug, thiserror::Error)]
enum StageError {
    #[error(transparent)]
    Backend(#[from] crate::backends::BackendError),
    #[error("{0}")]
    Invalid(String),
}

impl Pipeline {
    /// Convenience wrapper: the standard output layout under `out`, with
    /// the cache in `out/cache`.
    pub fn open(config: PipelineConfig, backends: Backends, out: &Path) -> Result<Self, PipelineError> {
        Self::new(config, backends, &out.join(CACHE_DIR))
    }
}
