use std::collections::BTreeMap;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use capfuse_core::corpus::load_manifest;
use capfuse_core::pipeline::{ClipVerdict, PipelineConfig, PipelineError, SUMMARY_FILE};
use capfuse_core::quality::{paired_labels, AgreementSummary, HumanAnnotation};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::annotation::{AnnotationTask, ImportOutcome, LabelPayload, StoredLabel, TaskImport};
use crate::auth::Caller;
use crate::calibration::{self, CalibrationRequest, CalibrationRun, CALIBRATION_FILE};
use crate::error::{parse_body, ApiError};
use crate::jobs::{ClipView, JobRecord, JobRequest, JobStatus, JobView};
use crate::state::AppState;

pub fn router(state: AppState) -> Router {
    let mut app = Router::new()
        .route("/bootstrap", get(bootstrap))
        .route("/jobs", post(submit_job))
        .route("/jobs/{id}", get(get_job))
        .route("/clips/{id}", get(get_clip))
        .route("/annotation/tasks", get(list_tasks).post(import_tasks))
        .route("/annotation/labels", post(post_label))
        .route("/stats", get(stats))
        .route("/calibration/run", post(run_calibration))
        .route("/calibration/report", get(calibration_report));
    if let Some(dir) = &state.config().ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir));
    }
    if let Some(dir) = &state.config().media_root {
        app = app.nest_service("/media", ServeDir::new(dir));
    }
    app.with_state(state)
}

/// Static settings the annotation UI loads once at start-up.
async fn bootstrap(State(state): State<AppState>) -> Json<Value> {
    Json(json!({
        "api_version": 1,
        "annotators_per_task": state.config().annotators_per_task,
        "error_values": [0.0, 0.5, 1.0],
        "detailness": {"min": 1, "max": 3},
        "score_buckets": [
            {"max_rate": 10.0, "score": 5},
            {"max_rate": 25.0, "score": 4},
            {"max_rate": 40.0, "score": 3},
            {"max_rate": 50.0, "score": 2},
            {"max_rate": 100.0, "score": 1},
        ],
        "endpoints": {
            "tasks": "/annotation/tasks",
            "labels": "/annotation/labels",
            "media": state.config().media_root.as_ref().map(|_| "/media"),
        },
    }))
}

fn config_error(e: PipelineError) -> ApiError {
    match e {
        PipelineError::Config(c) => ApiError::new(StatusCode::BAD_REQUEST, "invalid_config", c.message).with_field(c.field),
        other => ApiError::invalid("config", other.to_string()),
    }
}

async fn submit_job(
    State(state): State<AppState>,
    caller: Caller,
    body: Bytes,
) -> Result<(StatusCode, Json<JobView>), ApiError> {
    caller.require_admin()?;
    let req: JobRequest = parse_body(&body)?;
    if let Some(path) = &req.config {
        PipelineConfig::load(path).map_err(config_error)?;
    }
    load_manifest(&req.manifest).map_err(|e| ApiError::invalid("manifest", e.to_string()))?;

    let mut jobs = state.jobs();
    let job_id = jobs.next_id();
    let out_dir = req
        .out
        .clone()
        .unwrap_or_else(|| state.config().data_dir.join("jobs").join(&job_id));
    if !req.resume && out_dir.join(SUMMARY_FILE).exists() {
        return Err(ApiError::conflict(format!(
            "{} already holds a finished run; set resume to reuse it",
            out_dir.display()
        )));
    }
    let record = JobRecord {
        job_id: job_id.clone(),
        status: JobStatus::Queued,
        manifest: req.manifest,
        config: req.config,
        out_dir,
        resume: req.resume,
        limit: req.limit,
        summary: None,
        stages_executed: None,
        cache_hits: None,
        error: None,
    };
    jobs.put(record.clone())?;
    drop(jobs);
    state.enqueue(record.clone());
    Ok((StatusCode::ACCEPTED, Json(JobView { record, progress: None })))
}

async fn get_job(State(state): State<AppState>, _caller: Caller, Path(id): Path<String>) -> Result<Json<JobView>, ApiError> {
    state
        .jobs()
        .get(&id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown job `{id}`")))
}

async fn get_clip(State(state): State<AppState>, _caller: Caller, Path(id): Path<String>) -> Result<Json<ClipView>, ApiError> {
    state
        .jobs()
        .clip(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("clip `{id}` is not in any finished job")))
}

#[derive(Debug, Deserialize)]
struct TaskQuery {
    annotator: Option<String>,
}

async fn list_tasks(
    State(state): State<AppState>,
    caller: Caller,
    Query(q): Query<TaskQuery>,
) -> Result<Json<Vec<AnnotationTask>>, ApiError> {
    let annotator = match (&caller, q.annotator) {
        (Caller::Annotator(me), None) => me.clone(),
        (Caller::Annotator(me), Some(a)) if *me == a => a,
        (Caller::Annotator(_), Some(_)) => return Err(ApiError::forbidden("annotators may only list their own tasks")),
        (Caller::Admin, Some(a)) => a,
        (Caller::Admin, None) => return Err(ApiError::invalid("annotator", "query parameter is required")),
    };
    let store = state.annotation();
    if !store.annotators().contains(&annotator) {
        return Err(ApiError::not_found(format!("unknown annotator `{annotator}`")));
    }
    Ok(Json(store.tasks_for(&annotator)))
}

async fn import_tasks(
    State(state): State<AppState>,
    caller: Caller,
    body: Bytes,
) -> Result<Json<ImportOutcome>, ApiError> {
    caller.require_admin()?;
    let tasks: Vec<TaskImport> = parse_body(&body)?;
    state.import_tasks(tasks).map(Json)
}

async fn post_label(State(state): State<AppState>, caller: Caller, body: Bytes) -> Result<Json<StoredLabel>, ApiError> {
    let payload: LabelPayload = parse_body(&body)?;
    match &caller {
        Caller::Annotator(me) if *me == payload.annotator_id => {}
        _ => return Err(ApiError::forbidden("labels must be submitted with the annotator's own token")),
    }
    state.annotation().submit(payload).map(Json)
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct JobCounts {
    pub queued: usize,
    pub running: usize,
    pub done: usize,
    pub failed: usize,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ClipCounts {
    pub indexed: usize,
    pub kept: usize,
    pub filtered: usize,
    pub uncertain: usize,
    pub failed: usize,
    /// `filtered / (kept + filtered)`.
    pub filter_rate: f64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct AnnotatorProgress {
    pub assigned: usize,
    pub submitted: usize,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct AnnotationCounts {
    pub tasks: usize,
    pub labels: usize,
    /// Tasks holding every assigned rater's label.
    pub completed_tasks: usize,
    pub annotators: BTreeMap<String, AnnotatorProgress>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Stats {
    pub jobs: JobCounts,
    pub clips: ClipCounts,
    pub annotation: AnnotationCounts,
    pub agreement: Option<AgreementSummary>,
}

async fn stats(State(state): State<AppState>, _caller: Caller) -> Json<Stats> {
    let mut jobs = JobCounts::default();
    let mut clips = ClipCounts::default();
    {
        let store = state.jobs();
        for r in store.records() {
            *match r.status {
                JobStatus::Queued => &mut jobs.queued,
                JobStatus::Running => &mut jobs.running,
                JobStatus::Done => &mut jobs.done,
                JobStatus::Failed => &mut jobs.failed,
            } += 1;
        }
        for c in store.clips() {
            clips.indexed += 1;
            match c.status.verdict {
                ClipVerdict::Kept => clips.kept += 1,
                ClipVerdict::Filtered => clips.filtered += 1,
                ClipVerdict::Uncertain => clips.uncertain += 1,
                ClipVerdict::Failed | ClipVerdict::Interrupted => clips.failed += 1,
            }
        }
        let scored = clips.kept + clips.filtered;
        clips.filter_rate = if scored == 0 { 0.0 } else { clips.filtered as f64 / scored as f64 };
    }
    let store = state.annotation();
    let mut annotation = AnnotationCounts {
        annotators: store
            .annotators()
            .iter()
            .map(|a| (a.clone(), AnnotatorProgress::default()))
            .collect(),
        ..AnnotationCounts::default()
    };
    let mut per_task: BTreeMap<&str, usize> = BTreeMap::new();
    for l in store.labels() {
        annotation.labels += 1;
        *per_task.entry(&l.task_id).or_default() += 1;
        if let Some(p) = annotation.annotators.get_mut(&l.annotator_id) {
            p.submitted += 1;
        }
    }
    for t in store.tasks() {
        annotation.tasks += 1;
        if per_task.get(t.task.task_id.as_str()).copied().unwrap_or(0) >= t.assigned.len() {
            annotation.completed_tasks += 1;
        }
        for a in &t.assigned {
            if let Some(p) = annotation.annotators.get_mut(a) {
                p.assigned += 1;
            }
        }
    }
    let annotations: Vec<HumanAnnotation> = store.labels().map(StoredLabel::to_annotation).collect();
    Json(Stats {
        jobs,
        clips,
        annotation,
        agreement: paired_labels(&annotations),
    })
}

async fn run_calibration(
    State(state): State<AppState>,
    caller: Caller,
    body: Bytes,
) -> Result<Json<CalibrationRun>, ApiError> {
    caller.require_admin()?;
    let req: CalibrationRequest = if body.iter().all(u8::is_ascii_whitespace) {
        CalibrationRequest::default()
    } else {
        parse_body(&body)?
    };
    let cosines: BTreeMap<String, f64> = match &req.scores {
        Some(scores) => scores.iter().map(|s| (s.clip_id.clone(), s.cosine)).collect(),
        None => state
            .jobs()
            .clips()
            .filter_map(|c| Some((c.status.clip_id.clone(), c.status.cosine?)))
            .collect(),
    };
    let annotations: Vec<HumanAnnotation> = state.annotation().labels().map(StoredLabel::to_annotation).collect();
    let run = calibration::run(&annotations, &cosines, &req)?;
    let mut slot = state.calibration();
    run.save(&state.config().data_dir.join(CALIBRATION_FILE))?;
    *slot = Some(run.clone());
    Ok(Json(run))
}

async fn calibration_report(State(state): State<AppState>, _caller: Caller) -> Result<Json<CalibrationRun>, ApiError> {
    state
        .calibration()
        .clone()
        .map(Json)
        .ok_or_else(|| ApiError::not_found("no calibration has been run"))
}
