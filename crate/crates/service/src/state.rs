use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use capfuse_core::pipeline::RunProgress;
use tokio::sync::Semaphore;

use crate::annotation::{AnnotationStore, ImportOutcome, TaskImport};
use crate::calibration::{CalibrationRun, CALIBRATION_FILE};
use crate::config::ServiceConfig;
use crate::error::{ApiError, ServiceError};
use crate::jobs::{self, default_backend_factory, BackendFactory, JobRecord, JobStatus, JobStore};

pub const CACHE_DIR: &str = "cache";
pub const ANNOTATION_DIR: &str = "annotation";

/// Shared handle to the service's stores.
#[derive(Clone)]
pub struct AppState(Arc<Shared>);

struct Shared {
    config: ServiceConfig,
    jobs: Mutex<JobStore>,
    annotation: Mutex<AnnotationStore>,
    calibration: Mutex<Option<CalibrationRun>>,
    /// One pipeline run at a time; each run has its own worker pool.
    runner: Semaphore,
    factory: BackendFactory,
}

impl AppState {
    pub fn open(config: ServiceConfig) -> Result<Self, ServiceError> {
        Self::with_backend_factory(config, default_backend_factory())
    }

    pub fn with_backend_factory(config: ServiceConfig, factory: BackendFactory) -> Result<Self, ServiceError> {
        config.validate()?;
        let data = &config.data_dir;
        std::fs::create_dir_all(data).map_err(|e| ServiceError::io(data, e))?;
        let jobs = JobStore::open(data)?;
        let annotators = config.annotators.iter().map(|a| a.id.clone()).collect();
        let annotation = AnnotationStore::open(&data.join(ANNOTATION_DIR), annotators, config.annotators_per_task)?;
        let calibration = CalibrationRun::load(&data.join(CALIBRATION_FILE))?;
        Ok(Self(Arc::new(Shared {
            config,
            jobs: Mutex::new(jobs),
            annotation: Mutex::new(annotation),
            calibration: Mutex::new(calibration),
            runner: Semaphore::new(1),
            factory,
        })))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.0.config
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.0.config.data_dir.join(CACHE_DIR)
    }

    pub fn jobs(&self) -> MutexGuard<'_, JobStore> {
        self.0.jobs.lock().expect("job store lock")
    }

    pub fn annotation(&self) -> MutexGuard<'_, AnnotationStore> {
        self.0.annotation.lock().expect("annotation store lock")
    }

    pub(crate) fn calibration(&self) -> MutexGuard<'_, Option<CalibrationRun>> {
        self.0.calibration.lock().expect("calibration lock")
    }

    pub fn import_tasks(&self, tasks: Vec<TaskImport>) -> Result<ImportOutcome, ApiError> {
        self.annotation().import(tasks)
    }

    /// Re-enqueues jobs that were queued or running when the service last
    /// stopped. They resume from the stage cache. Needs a Tokio runtime.
    pub fn resume_pending(&self) {
        let pending: Vec<JobRecord> = self
            .jobs()
            .records()
            .filter(|r| matches!(r.status, JobStatus::Queued | JobStatus::Running))
            .cloned()
            .collect();
        for mut r in pending {
            tracing::info!(job_id = %r.job_id, "resuming interrupted job");
            r.resume = true;
            self.enqueue(r);
        }
    }

    /// Runs `record` in the background once the runner is free.
    pub(crate) fn enqueue(&self, record: JobRecord) {
        let state = self.clone();
        tokio::spawn(async move {
            let _permit = state.0.runner.acquire().await.expect("runner semaphore is never closed");
            let progress = Arc::new(RunProgress::default());
            let mut running = record.clone();
            running.status = JobStatus::Running;
            {
                let mut jobs = state.jobs();
                jobs.track(&running.job_id, progress.clone());
                if let Err(e) = jobs.put(running.clone()) {
                    tracing::error!(job_id = %running.job_id, error = %e, "cannot persist job state");
                    return;
                }
            }
            let (cache, factory) = (state.cache_dir(), state.0.factory.clone());
            let job = running.clone();
            let outcome = tokio::task::spawn_blocking(move || jobs::execute(&job, &cache, &factory, progress)).await;
            let mut finished = running;
            match outcome {
                Ok(Ok(summary)) => {
                    finished.status = JobStatus::Done;
                    finished.stages_executed = Some(summary.stages_executed.clone());
                    finished.cache_hits = Some(summary.cache_hits);
                    finished.summary = Some(summary);
                }
                Ok(Err(e)) => {
                    finished.status = JobStatus::Failed;
                    finished.error = Some(e.to_string());
                }
                Err(e) => {
                    finished.status = JobStatus::Failed;
                    finished.error = Some(format!("job panicked: {e}"));
                }
            }
            tracing::info!(job_id = %finished.job_id, status = ?finished.status, "job finished");
            if let Err(e) = state.jobs().put(finished) {
                tracing::error!(error = %e, "cannot persist job state");
            }
        });
    }
}
