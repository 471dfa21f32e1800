mod common;

use std::path::Path;
use std::sync::Arc;

use axum::http::StatusCode;
use capfuse_core::backends::MockBackend;
use capfuse_core::quality::{calibrate, CalibrationSample, ThresholdGrid, F1_05};
use capfuse_service::jobs::JobStore;
use capfuse_service::{router, JobRecord, JobStatus};
use common::*;
use serde_json::{json, Value};

fn job_body(manifest: &Path, extra: Value) -> String {
    let mut body = json!({"manifest": manifest});
    body.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    body.to_string()
}

async fn submit(app: &axum::Router, body: String) -> String {
    let r = post(app, "/jobs", Some(ADMIN), body).await;
    assert_eq!(r.status, StatusCode::ACCEPTED, "{:?}", r.body);
    assert_eq!(r.body["status"], "queued");
    r.body["job_id"].as_str().unwrap().to_owned()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn job_runs_and_indexes_clips() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = manifest(dir.path(), 6);
    let mock = Arc::new(MockBackend::new(3));
    let app = router(state(&data, mock.clone()));

    let id = submit(&app, job_body(&manifest, json!({}))).await;
    let job = wait_for_job(&app, &id).await;
    assert_eq!(job["status"], "done", "{job:?}");
    assert_eq!(job["summary"]["ingested"], 6);
    assert_eq!(job["progress"], json!({"total": 6, "completed": 6}));
    assert_eq!(job["cache_hits"], 0);
    assert_eq!(job["stages_executed"]["separate"], 6);
    assert!(data.join("jobs").join(&id).join("summary.json").exists());

    let clip = get(&app, "/clips/clip-002", Some(&token("erin"))).await;
    assert_eq!(clip.status, StatusCode::OK);
    assert_eq!(clip.body["job_id"], id.as_str());
    assert_eq!(clip.body["status"]["clip_id"], "clip-002");
    let verdict = clip.body["status"]["verdict"].as_str().unwrap();
    assert_eq!(clip.body["record"].is_object(), matches!(verdict, "kept" | "filtered"), "{verdict}");
    assert_eq!(get(&app, "/clips/clip-999", Some(ADMIN)).await.status, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/jobs/job-999999", Some(ADMIN)).await.status, StatusCode::NOT_FOUND);

    let stats = get(&app, "/stats", Some(ADMIN)).await.body;
    assert_eq!(stats["jobs"]["done"], 1);
    let c = &stats["clips"];
    assert_eq!(c["indexed"], 6);
    let counted: u64 = ["kept", "filtered", "uncertain", "failed"].iter().map(|k| c[k].as_u64().unwrap()).sum();
    assert_eq!(counted, 6);
    assert_eq!(c["kept"], job["summary"]["kept"]);

    // A second job over the same clips is served entirely from the shared cache.
    let before = mock.total_calls();
    let again = submit(&app, job_body(&manifest, json!({}))).await;
    assert_ne!(again, id);
    let job2 = wait_for_job(&app, &again).await;
    assert_eq!(job2["status"], "done");
    assert_eq!(mock.total_calls(), before);
    assert!(job2["stages_executed"].as_object().unwrap().values().all(|v| v == 0));
    assert!(job2["cache_hits"].as_u64().unwrap() >= 6 * 5);
    assert_eq!(job2["summary"], job["summary"]);
    let a = std::fs::read(data.join("jobs").join(&id).join("clips.jsonl")).unwrap();
    let b = std::fs::read(data.join("jobs").join(&again).join("clips.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn job_requests_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = manifest(dir.path(), 2);
    let app = router(state(&data, Arc::new(MockBackend::new(3))));

    let bad = pipeline_config(dir.path(), r#"{"endpoints": {"asr": {"base_url": "ftp://nowhere"}}}"#);
    let r = post(&app, "/jobs", Some(ADMIN), job_body(&manifest, json!({"config": bad}))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.body["error"]["code"], "invalid_config");
    assert_eq!(r.body["error"]["field"], "endpoints.asr.base_url");

    let r = post(&app, "/jobs", Some(ADMIN), job_body(&dir.path().join("missing.jsonl"), json!({}))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.body["error"]["field"], "manifest");

    let r = post(&app, "/jobs", Some(ADMIN), job_body(&manifest, json!({"workers": 3}))).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = post(&app, "/jobs", Some(ADMIN), r#"{"manifest": 7}"#).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(r.body["error"]["field"], "manifest");

    let stats = get(&app, "/stats", Some(ADMIN)).await.body;
    assert_eq!(stats["jobs"], json!({"queued": 0, "running": 0, "done": 0, "failed": 0}));

    // An explicit output directory holding a finished run needs `resume`.
    let out = dir.path().join("out");
    let id = submit(&app, job_body(&manifest, json!({"out": out, "limit": 1}))).await;
    assert_eq!(wait_for_job(&app, &id).await["summary"]["ingested"], 1);
    let r = post(&app, "/jobs", Some(ADMIN), job_body(&manifest, json!({"out": out}))).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    let id = submit(&app, job_body(&manifest, json!({"out": out, "resume": true}))).await;
    assert_eq!(wait_for_job(&app, &id).await["summary"]["ingested"], 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn failed_backends_fail_the_job() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = manifest(dir.path(), 2);
    let factory: capfuse_service::BackendFactory = Arc::new(|_| {
        Err(capfuse_core::pipeline::PipelineError::Backend {
            role: capfuse_core::backends::Role::Asr,
            message: "unreachable".into(),
        })
    });
    let state = capfuse_service::AppState::with_backend_factory(service_config(&dir.path().join("data")), factory).unwrap();
    let app = router(state);
    let id = submit(&app, job_body(&manifest, json!({}))).await;
    let job = wait_for_job(&app, &id).await;
    assert_eq!(job["status"], "failed");
    assert!(job["error"].as_str().unwrap().contains("unreachable"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn interrupted_jobs_resume_on_start() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let manifest = manifest(dir.path(), 4);
    let out = dir.path().join("out");
    std::fs::create_dir_all(&data).unwrap();
    {
        let mut store = JobStore::open(&data).unwrap();
        store
            .put(JobRecord {
                job_id: "job-000001".into(),
                status: JobStatus::Running,
                manifest: manifest.clone(),
                config: None,
                out_dir: out.clone(),
                resume: false,
                limit: None,
                summary: None,
                stages_executed: None,
                cache_hits: None,
                error: None,
            })
            .unwrap();
    }
    // Leave a half-written snapshot behind as well.
    let log = data.join("jobs.jsonl");
    let mut bytes = std::fs::read(&log).unwrap();
    bytes.extend_from_slice(br#"{"job_id": "job-0000"#);
    std::fs::write(&log, bytes).unwrap();

    let mock = Arc::new(MockBackend::new(3));
    let state = state(&data, mock.clone());
    state.resume_pending();
    let app = router(state);
    let job = wait_for_job(&app, "job-000001").await;
    assert_eq!(job["status"], "done", "{job:?}");
    assert_eq!(job["resume"], true);
    assert_eq!(job["summary"]["ingested"], 4);
    assert_eq!(get(&app, "/clips/clip-003", Some(ADMIN)).await.status, StatusCode::OK);

    // The next id does not collide with the recovered one, and finished
    // jobs stay indexed after a restart.
    drop(app);
    let app = router(common::state(&data, mock));
    assert_eq!(get(&app, "/clips/clip-003", Some(ADMIN)).await.body["job_id"], "job-000001");
    let id = submit(&app, job_body(&manifest, json!({}))).await;
    assert_eq!(id, "job-000002");
    wait_for_job(&app, &id).await;
}

fn label_all(errors: f64) -> Vec<f64> {
    vec![errors; 2]
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn calibration_runs_over_labels() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let app = router(state(&data, Arc::new(MockBackend::new(3))));

    let r = post(&app, "/calibration/run", Some(ADMIN), "").await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(get(&app, "/calibration/report", Some(ADMIN)).await.status, StatusCode::NOT_FOUND);

    post(&app, "/annotation/tasks", Some(ADMIN), tasks_json(6, 2)).await;
    for i in 0..6 {
        let errors = if i < 3 { label_all(1.0) } else { label_all(0.0) };
        for who in [ANNOTATORS[2 * i % 5], ANNOTATORS[(2 * i + 1) % 5]] {
            let body = json!({
                "task_id": format!("t-{i:04}"),
                "annotator_id": who,
                "detailness": 2,
                "phrase_errors": errors,
                "extra_units": [],
            });
            let r = post(&app, "/annotation/labels", Some(&token(who)), body.to_string()).await;
            assert_eq!(r.status, StatusCode::OK, "{:?}", r.body);
        }
    }
    // No finished job yet, so nothing has a cosine.
    assert_eq!(post(&app, "/calibration/run", Some(ADMIN), "{}").await.status, StatusCode::CONFLICT);

    let cosines = [0.01, 0.02, 0.03, 0.5, 0.6, 0.7];
    let scores: Vec<Value> = cosines
        .iter()
        .enumerate()
        .map(|(i, c)| json!({"clip_id": format!("clip-{i:03}"), "cosine": c}))
        .chain([json!({"clip_id": "clip-unlabelled", "cosine": 0.9})])
        .collect();
    let r = post(&app, "/calibration/run", Some(&token("alice")), json!({"scores": scores}).to_string()).await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);
    let r = post(&app, "/calibration/run", Some(ADMIN), json!({"scores": scores}).to_string()).await;
    assert_eq!(r.status, StatusCode::OK, "{:?}", r.body);
    assert_eq!(r.body["samples"], 6);
    assert_eq!(r.body["unscored"], json!([]));
    let report = &r.body["report"];
    assert_eq!(report["chosen_threshold"], 0.035);
    assert_eq!(report["chosen_f_beta"], 1.0);
    assert_eq!(report["positives"], 3);

    let samples: Vec<CalibrationSample> =
        cosines.iter().enumerate().map(|(i, &c)| CalibrationSample::new(c, if i < 3 { 1 } else { 5 })).collect();
    let direct = calibrate(&samples, &ThresholdGrid::default(), F1_05).unwrap();
    assert_eq!(serde_json::to_value(&direct).unwrap(), *report);

    let r = post(&app, "/calibration/run", Some(ADMIN), json!({"scores": scores, "step": 0.0}).to_string()).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    // The report survives a restart.
    drop(app);
    let app = router(state(&data, Arc::new(MockBackend::new(3))));
    let saved = get(&app, "/calibration/report", Some(&token("bob"))).await;
    assert_eq!(saved.status, StatusCode::OK);
    assert_eq!(saved.body["report"], *report);

    // Without explicit scores, cosines come from finished jobs.
    let manifest = manifest(dir.path(), 4);
    let id = submit(&app, job_body(&manifest, json!({}))).await;
    wait_for_job(&app, &id).await;
    let r = post(&app, "/calibration/run", Some(ADMIN), "").await;
    assert_eq!(r.status, StatusCode::OK, "{:?}", r.body);
    let scored = r.body["samples"].as_u64().unwrap();
    let unscored = r.body["unscored"].as_array().unwrap();
    assert_eq!(scored as usize + unscored.len(), 6);
    assert!(unscored.contains(&json!("clip-004")) && unscored.contains(&json!("clip-005")));
}
