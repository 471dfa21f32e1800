//! Annotation tasks and labels, persisted as append-only JSONL logs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use capfuse_core::quality::{ErrorValue, HumanAnnotation, QualityError};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ServiceError};
use crate::persist;

pub const TASKS_FILE: &str = "tasks.jsonl";
pub const LABELS_FILE: &str = "labels.jsonl";

/// A phrase to verify: `span` is `[start, end)` in characters of the caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlaggedPhrase {
    pub span: [usize; 2],
    pub text: String,
}

/// A pre-flagged task as imported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskImport {
    pub task_id: String,
    pub clip_id: String,
    pub caption: String,
    pub flagged_phrases: Vec<FlaggedPhrase>,
    pub audio_url: String,
}

impl TaskImport {
    pub fn validate(&self) -> Result<(), ApiError> {
        if self.task_id.is_empty() {
            return Err(ApiError::invalid("task_id", "must be non-empty"));
        }
        if self.clip_id.is_empty() {
            return Err(ApiError::invalid("clip_id", "must be non-empty"));
        }
        if self.flagged_phrases.is_empty() {
            return Err(ApiError::invalid("flagged_phrases", "at least one flagged phrase is required"));
        }
        let chars: Vec<char> = self.caption.chars().collect();
        for (i, p) in self.flagged_phrases.iter().enumerate() {
            let [start, end] = p.span;
            if start >= end || end > chars.len() {
                return Err(ApiError::invalid(
                    format!("flagged_phrases[{i}].span"),
                    format!("span [{start}, {end}) outside caption of {} characters", chars.len()),
                ));
            }
            let slice: String = chars[start..end].iter().collect();
            if slice != p.text {
                return Err(ApiError::invalid(
                    format!("flagged_phrases[{i}].text"),
                    format!("span covers {slice:?}, not {:?}", p.text),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredTask {
    #[serde(flatten)]
    pub task: TaskImport,
    /// Position in import order; drives round-robin assignment.
    pub ordinal: usize,
    pub assigned: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Open,
    Submitted,
}

/// A task as seen by one annotator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub clip_id: String,
    pub caption: String,
    pub flagged_phrases: Vec<FlaggedPhrase>,
    pub audio_url: String,
    pub status: TaskStatus,
}

/// Request body of `POST /annotation/labels`.
///
/// `phrase_errors` holds one value per flagged phrase, in order, followed by
/// one per entry of `extra_units`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelPayload {
    pub task_id: String,
    pub annotator_id: String,
    pub detailness: i64,
    pub phrase_errors: Vec<f64>,
    #[serde(default)]
    pub extra_units: Vec<String>,
}

/// A persisted label with the server-computed scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredLabel {
    pub task_id: String,
    pub clip_id: String,
    pub annotator_id: String,
    pub detailness: i64,
    pub phrase_errors: Vec<f64>,
    pub extra_units: Vec<String>,
    pub hallucination_rate: f64,
    pub hallucination_score: u8,
}

impl StoredLabel {
    pub fn to_annotation(&self) -> HumanAnnotation {
        let errors = self
            .phrase_errors
            .iter()
            .map(|v| ErrorValue::try_from(*v).expect("validated on submit"))
            .collect();
        HumanAnnotation::new(
            self.clip_id.clone(),
            self.annotator_id.clone(),
            self.detailness,
            errors,
            self.extra_units.len(),
        )
        .expect("validated on submit")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportOutcome {
    pub imported: usize,
    /// Tasks already present with identical content.
    pub unchanged: usize,
}

#[derive(Debug)]
pub struct AnnotationStore {
    dir: PathBuf,
    annotators: Vec<String>,
    per_task: usize,
    tasks: BTreeMap<String, StoredTask>,
    labels: BTreeMap<String, Vec<StoredLabel>>,
}

impl AnnotationStore {
    pub fn open(dir: &Path, annotators: Vec<String>, per_task: usize) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(dir).map_err(|e| ServiceError::io(dir, e))?;
        let mut store = Self {
            dir: dir.to_owned(),
            annotators,
            per_task,
            tasks: BTreeMap::new(),
            labels: BTreeMap::new(),
        };
        for t in persist::recover_lines::<StoredTask>(&dir.join(TASKS_FILE))? {
            store.tasks.insert(t.task.task_id.clone(), t);
        }
        for l in persist::recover_lines::<StoredLabel>(&dir.join(LABELS_FILE))? {
            store.labels.entry(l.task_id.clone()).or_default().push(l);
        }
        Ok(store)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &StoredTask> {
        self.tasks.values()
    }

    pub fn labels(&self) -> impl Iterator<Item = &StoredLabel> {
        self.labels.values().flatten()
    }

    pub fn annotators(&self) -> &[String] {
        &self.annotators
    }

    /// Round-robin: task `i` goes to annotators `(k*i + j) mod A`, `j < k`.
    fn assign(&self, ordinal: usize) -> Vec<String> {
        let a = self.annotators.len();
        (0..self.per_task)
            .map(|j| self.annotators[(self.per_task * ordinal + j) % a].clone())
            .collect()
    }

    /// Validates every task first, then appends the new ones. Re-importing
    /// an identical task is a no-op; a different task under a known id is a
    /// conflict.
    pub fn import(&mut self, tasks: Vec<TaskImport>) -> Result<ImportOutcome, ApiError> {
        if self.annotators.len() < self.per_task {
            return Err(ApiError::conflict(format!(
                "{} annotator(s) configured, {} needed per task",
                self.annotators.len(),
                self.per_task
            )));
        }
        let mut seen = BTreeMap::new();
        let mut fresh = Vec::new();
        let mut unchanged = 0;
        for (i, t) in tasks.into_iter().enumerate() {
            t.validate().map_err(|e| match e.field.clone() {
                Some(f) => e.with_field(format!("[{i}].{f}")),
                None => e,
            })?;
            if let Some(prev) = seen.insert(t.task_id.clone(), i) {
                return Err(ApiError::invalid(format!("[{i}].task_id"), format!("duplicates entry {prev}")));
            }
            match self.tasks.get(&t.task_id) {
                Some(existing) if existing.task == t => unchanged += 1,
                Some(_) => return Err(ApiError::conflict(format!("task `{}` exists with different content", t.task_id))),
                None => fresh.push(t),
            }
        }
        let path = self.dir.join(TASKS_FILE);
        let imported = fresh.len();
        for t in fresh {
            let ordinal = self.tasks.len();
            let stored = StoredTask {
                assigned: self.assign(ordinal),
                ordinal,
                task: t,
            };
            persist::append_line(&path, &stored)?;
            self.tasks.insert(stored.task.task_id.clone(), stored);
        }
        Ok(ImportOutcome { imported, unchanged })
    }

    fn status_for(&self, task_id: &str, annotator: &str) -> TaskStatus {
        let done = self
            .labels
            .get(task_id)
            .is_some_and(|ls| ls.iter().any(|l| l.annotator_id == annotator));
        if done {
            TaskStatus::Submitted
        } else {
            TaskStatus::Open
        }
    }

    /// Tasks assigned to `annotator`, in import order.
    pub fn tasks_for(&self, annotator: &str) -> Vec<AnnotationTask> {
        let mut mine: Vec<&StoredTask> = self
            .tasks
            .values()
            .filter(|t| t.assigned.iter().any(|a| a == annotator))
            .collect();
        mine.sort_by_key(|t| t.ordinal);
        mine.into_iter()
            .map(|t| AnnotationTask {
                task_id: t.task.task_id.clone(),
                clip_id: t.task.clip_id.clone(),
                caption: t.task.caption.clone(),
                flagged_phrases: t.task.flagged_phrases.clone(),
                audio_url: t.task.audio_url.clone(),
                status: self.status_for(&t.task.task_id, annotator),
            })
            .collect()
    }

    /// Validates, scores and durably records one label.
    pub fn submit(&mut self, payload: LabelPayload) -> Result<StoredLabel, ApiError> {
        let task = self
            .tasks
            .get(&payload.task_id)
            .ok_or_else(|| ApiError::not_found(format!("unknown task `{}`", payload.task_id)))?;
        let existing = self.labels.get(&payload.task_id).map(Vec::as_slice).unwrap_or_default();
        if existing.iter().any(|l| l.annotator_id == payload.annotator_id) {
            return Err(ApiError::conflict(format!(
                "`{}` already labelled task `{}`",
                payload.annotator_id, payload.task_id
            )));
        }
        if !task.assigned.contains(&payload.annotator_id) || existing.len() >= self.per_task {
            return Err(ApiError::conflict(format!(
                "task `{}` is rated by {} only",
                payload.task_id,
                task.assigned.join(", ")
            )));
        }
        let expected = task.task.flagged_phrases.len() + payload.extra_units.len();
        if payload.phrase_errors.len() != expected {
            return Err(ApiError::invalid(
                "phrase_errors",
                format!(
                    "expected {expected} values ({} flagged phrases + {} extra units), got {}",
                    task.task.flagged_phrases.len(),
                    payload.extra_units.len(),
                    payload.phrase_errors.len()
                ),
            ));
        }
        let errors = payload
            .phrase_errors
            .iter()
            .enumerate()
            .map(|(i, v)| {
                ErrorValue::try_from(*v)
                    .map_err(|_| ApiError::invalid(format!("phrase_errors[{i}]"), format!("{v} is not one of 0, 0.5, 1")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(i) = payload.extra_units.iter().position(|u| u.trim().is_empty()) {
            return Err(ApiError::invalid(format!("extra_units[{i}]"), "must be non-empty"));
        }
        let annotation = HumanAnnotation::new(
            task.task.clip_id.clone(),
            payload.annotator_id.clone(),
            payload.detailness,
            errors,
            payload.extra_units.len(),
        )
        .map_err(|e| match e {
            QualityError::DetailnessOutOfRange(_) => ApiError::invalid("detailness", e.to_string()),
            other => ApiError::bad_request(other.to_string()),
        })?;
        let label = StoredLabel {
            task_id: payload.task_id,
            clip_id: annotation.clip_id,
            annotator_id: payload.annotator_id,
            detailness: payload.detailness,
            phrase_errors: payload.phrase_errors,
            extra_units: payload.extra_units,
            hallucination_rate: annotation.hallucination_rate,
            hallucination_score: annotation.hallucination_score,
        };
        persist::append_line(&self.dir.join(LABELS_FILE), &label)?;
        self.labels.entry(label.task_id.clone()).or_default().push(label.clone());
        Ok(label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use axum::http::StatusCode;

    fn task(id: &str) -> TaskImport {
        TaskImport {
            task_id: id.into(),
            clip_id: format!("clip-{id}"),
            caption: "A dog barks near a busy road.".into(),
            flagged_phrases: vec![
                FlaggedPhrase { span: [2, 5], text: "dog".into() },
                FlaggedPhrase { span: [19, 29], text: "busy road.".into() },
            ],
            audio_url: format!("/media/{id}.wav"),
        }
    }

    fn store(dir: &Path, annotators: usize) -> AnnotationStore {
        AnnotationStore::open(dir, (0..annotators).map(|i| format!("a{i}")).collect(), 2).unwrap()
    }

    fn label(task: &str, who: &str, errors: &[f64]) -> LabelPayload {
        LabelPayload {
            task_id: task.into(),
            annotator_id: who.into(),
            detailness: 2,
            phrase_errors: errors.to_vec(),
            extra_units: vec![],
        }
    }

    #[test]
    fn spans_are_checked() {
        let mut t = task("t");
        t.flagged_phrases[0].span = [2, 40];
        assert_eq!(t.validate().unwrap_err().field.as_deref(), Some("flagged_phrases[0].span"));
        let mut t = task("t");
        t.flagged_phrases[1].text = "road".into();
        assert_eq!(t.validate().unwrap_err().field.as_deref(), Some("flagged_phrases[1].text"));
        let mut t = task("t");
        t.flagged_phrases.clear();
        assert!(t.validate().is_err());
    }

    #[test]
    fn round_robin_gives_two_distinct_raters() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = store(dir.path(), 5);
        s.import((0..10).map(|i| task(&format!("t{i}"))).collect()).unwrap();
        for t in s.tasks() {
            let i = t.ordinal;
            assert_eq!(t.assigned, [format!("a{}", 2 * i % 5), format!("a{}", (2 * i + 1) % 5)]);
        }
        // 10 tasks x 2 raters over 5 annotators: 4 each.
        for a in 0..5 {
            assert_eq!(s.tasks_for(&format!("a{a}")).len(), 4);
        }
    }

    #[test]
    fn reimport_is_idempotent_and_conflicts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = store(dir.path(), 2);
        assert_eq!(s.import(vec![task("t1")]).unwrap(), ImportOutcome { imported: 1, unchanged: 0 });
        assert_eq!(s.import(vec![task("t1")]).unwrap(), ImportOutcome { imported: 0, unchanged: 1 });
        let mut changed = task("t1");
        changed.audio_url = "/elsewhere.wav".into();
        assert_eq!(s.import(vec![changed]).unwrap_err().status, StatusCode::CONFLICT);
        assert_eq!(s.import(vec![task("t2"), task("t2")]).unwrap_err().status, StatusCode::BAD_REQUEST);
    }

    #[test]
    fn submit_rules() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = store(dir.path(), 3);
        s.import(vec![task("t0")]).unwrap();
        // t0 goes to a0 and a1.
        assert_eq!(s.submit(label("t0", "a0", &[0.0])).unwrap_err().status, StatusCode::BAD_REQUEST);
        let bad = s.submit(label("t0", "a0", &[0.0, 0.7])).unwrap_err();
        assert_eq!(bad.field.as_deref(), Some("phrase_errors[1]"));
        let l = s.submit(label("t0", "a0", &[0.0, 0.0])).unwrap();
        assert_eq!((l.hallucination_rate, l.hallucination_score), (0.0, 5));
        assert_eq!(s.submit(label("t0", "a0", &[1.0, 1.0])).unwrap_err().status, StatusCode::CONFLICT);
        assert_eq!(s.submit(label("t0", "a2", &[1.0, 1.0])).unwrap_err().status, StatusCode::CONFLICT);
        assert_eq!(s.submit(label("nope", "a0", &[0.0])).unwrap_err().status, StatusCode::NOT_FOUND);
        let mut p = label("t0", "a1", &[0.0, 0.0]);
        p.detailness = 4;
        assert_eq!(s.submit(p).unwrap_err().field.as_deref(), Some("detailness"));
        let mut p = label("t0", "a1", &[1.0, 0.5, 0.0]);
        p.extra_units = vec!["a horn".into()];
        let l = s.submit(p).unwrap();
        assert_eq!((l.hallucination_rate, l.hallucination_score), (50.0, 2));
        assert_eq!(s.tasks_for("a1")[0].status, TaskStatus::Submitted);
        assert_eq!(s.tasks_for("a2").len(), 0);
    }

    #[test]
    fn state_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = store(dir.path(), 2);
            s.import(vec![task("t0"), task("t1")]).unwrap();
            s.submit(label("t1", "a0", &[1.0, 0.0])).unwrap();
        }
        let s = store(dir.path(), 2);
        assert_eq!(s.tasks().count(), 2);
        assert_eq!(s.labels().count(), 1);
        assert_eq!(s.tasks_for("a0")[1].status, TaskStatus::Submitted);
    }
}
