//! Pipeline jobs: records, persistence and the clip index built from
//! finished runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::sync::Arc;

use capfuse_core::corpus::{read_shards, ShardRecord, Stage};
use capfuse_core::pipeline::{
    Backends, ClipStatusLine, Pipeline, PipelineConfig, PipelineError, RunOptions, RunProgress, RunSummary,
    CLIPS_FILE, SHARDS_DIR,
};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::persist;

pub const JOBS_FILE: &str = "jobs.jsonl";

/// Builds backends for a job's config. Swappable so tests can share mocks.
pub type BackendFactory = Arc<dyn Fn(&PipelineConfig) -> Result<Backends, PipelineError> + Send + Sync>;

pub fn default_backend_factory() -> BackendFactory {
    Arc::new(Backends::from_config)
}

/// Request body of `POST /jobs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRequest {
    pub manifest: PathBuf,
    /// Pipeline config file; the built-in defaults when absent.
    #[serde(default)]
    pub config: Option<PathBuf>,
    /// Output directory; `<data_dir>/jobs/<job_id>` when absent.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub resume: bool,
    #[serde(default)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

/// The persisted state of one job. Each transition appends a full snapshot
/// to the job log; the last snapshot per id wins on reload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub status: JobStatus,
    pub manifest: PathBuf,
    #[serde(default)]
    pub config: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub resume: bool,
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub summary: Option<RunSummary>,
    /// Stage executions that reached a backend (cache misses).
    #[serde(default)]
    pub stages_executed: Option<BTreeMap<Stage, usize>>,
    #[serde(default)]
    pub cache_hits: Option<usize>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub completed: usize,
}

/// `GET /jobs/{id}` body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    #[serde(flatten)]
    pub record: JobRecord,
    #[serde(default)]
    pub progress: Option<Progress>,
}

/// `GET /clips/{id}` body: the clip's latest outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipView {
    pub job_id: String,
    pub status: ClipStatusLine,
    #[serde(default)]
    pub record: Option<ShardRecord>,
}

#[derive(Default)]
pub struct JobStore {
    path: PathBuf,
    jobs: BTreeMap<String, JobRecord>,
    progress: BTreeMap<String, Arc<RunProgress>>,
    clips: BTreeMap<String, ClipView>,
}

impl JobStore {
    /// Loads the job log and indexes the clips of finished jobs.
    pub fn open(data_dir: &Path) -> Result<Self, ServiceError> {
        let path = data_dir.join(JOBS_FILE);
        let mut store = Self {
            path: path.clone(),
            ..Self::default()
        };
        for r in persist::recover_lines::<JobRecord>(&path)? {
            store.jobs.insert(r.job_id.clone(), r);
        }
        let done: Vec<JobRecord> = store
            .jobs
            .values()
            .filter(|r| r.status == JobStatus::Done)
            .cloned()
            .collect();
        for r in &done {
            if let Err(e) = store.index_clips(r) {
                tracing::warn!(job_id = %r.job_id, error = %e, "cannot index clips of finished job");
            }
        }
        Ok(store)
    }

    pub fn next_id(&self) -> String {
        format!("job-{:06}", self.jobs.len() + 1)
    }

    pub fn get(&self, id: &str) -> Option<JobView> {
        let record = self.jobs.get(id)?.clone();
        let progress = self.progress.get(id).map(|p| Progress {
            total: p.total.load(Ordering::Relaxed),
            completed: p.completed.load(Ordering::Relaxed),
        });
        Some(JobView { record, progress })
    }

    pub fn records(&self) -> impl Iterator<Item = &JobRecord> {
        self.jobs.values()
    }

    pub fn clip(&self, id: &str) -> Option<&ClipView> {
        self.clips.get(id)
    }

    pub fn clips(&self) -> impl Iterator<Item = &ClipView> {
        self.clips.values()
    }

    /// Records a state transition durably, then applies it.
    pub fn put(&mut self, record: JobRecord) -> Result<(), ServiceError> {
        persist::append_line(&self.path, &record)?;
        if record.status == JobStatus::Done {
            if let Err(e) = self.index_clips(&record) {
                tracing::warn!(job_id = %record.job_id, error = %e, "cannot index clips");
            }
        }
        self.jobs.insert(record.job_id.clone(), record);
        Ok(())
    }

    pub fn track(&mut self, id: &str, progress: Arc<RunProgress>) {
        self.progress.insert(id.to_owned(), progress);
    }

    fn index_clips(&mut self, record: &JobRecord) -> Result<(), ServiceError> {
        let clips_path = record.out_dir.join(CLIPS_FILE);
        let text = std::fs::read_to_string(&clips_path).map_err(|e| ServiceError::io(&clips_path, e))?;
        let shards: BTreeMap<String, ShardRecord> = read_shards(&record.out_dir.join(SHARDS_DIR))
            .map_err(|e| ServiceError::Corrupt {
                path: record.out_dir.display().to_string(),
                line: 0,
                message: e.to_string(),
            })?
            .into_iter()
            .map(|r| (r.clip_id.clone(), r))
            .collect();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let status: ClipStatusLine = serde_json::from_str(line).map_err(|e| ServiceError::Corrupt {
                path: clips_path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            let view = ClipView {
                job_id: record.job_id.clone(),
                record: shards.get(&status.clip_id).cloned(),
                status,
            };
            self.clips.insert(view.status.clip_id.clone(), view);
        }
        Ok(())
    }
}

/// Runs one job to completion on the calling (blocking) thread.
pub fn execute(
    record: &JobRecord,
    cache_dir: &Path,
    factory: &BackendFactory,
    progress: Arc<RunProgress>,
) -> Result<RunSummary, PipelineError> {
    let config = match &record.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let records = capfuse_core::corpus::load_manifest(&record.manifest)?;
    let backends = factory(&config)?;
    let mut pipeline = Pipeline::new(config, backends, cache_dir)?;
    let opts = RunOptions {
        resume: record.resume,
        limit: record.limit,
        stop_after: None,
        progress: Some(progress),
    };
    pipeline.run(&records, &record.out_dir, &opts)
}
