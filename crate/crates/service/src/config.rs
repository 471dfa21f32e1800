use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorConfig {
    pub id: String,
    pub token: String,
}

/// Service settings, usually loaded from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    /// Job records, annotation stores, calibration report and the shared
    /// stage cache live here.
    pub data_dir: PathBuf,
    #[serde(default)]
    pub admin_tokens: Vec<String>,
    /// Annotators in assignment order.
    #[serde(default)]
    pub annotators: Vec<AnnotatorConfig>,
    #[serde(default = "default_per_task")]
    pub annotators_per_task: usize,
    /// Built annotation UI, served under `/ui`.
    #[serde(default)]
    pub ui_dir: Option<PathBuf>,
    /// Clip audio, served under `/media`.
    #[serde(default)]
    pub media_root: Option<PathBuf>,
}

fn default_per_task() -> usize {
    2
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            admin_tokens: Vec::new(),
            annotators: Vec::new(),
            annotators_per_task: default_per_task(),
            ui_dir: None,
            media_root: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::io(path, e))?;
        let mut config: Self = serde_json::from_str(&text).map_err(|e| ServiceError::Config(e.to_string()))?;
        if let Some(base) = path.parent() {
            for p in [Some(&mut config.data_dir), config.ui_dir.as_mut(), config.media_root.as_mut()]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        let err = |m: String| Err(ServiceError::Config(m));
        let mut ids = BTreeSet::new();
        let mut tokens: BTreeSet<&str> = BTreeSet::new();
        for a in &self.annotators {
            if a.id.is_empty() || a.token.is_empty() {
                return err("annotator id and token must be non-empty".into());
            }
            if !ids.insert(a.id.as_str()) {
                return err(format!("duplicate annotator id `{}`", a.id));
            }
            if !tokens.insert(&a.token) {
                return err(format!("token of `{}` is not unique", a.id));
            }
        }
        for t in &self.admin_tokens {
            if t.is_empty() || !tokens.insert(t) {
                return err("admin tokens must be non-empty and distinct from annotator tokens".into());
            }
        }
        if self.annotators_per_task == 0 {
            return err("annotators_per_task must be >= 1".into());
        }
        if !self.annotators.is_empty() && self.annotators.len() < self.annotators_per_task {
            return err(format!(
                "{} annotators cannot cover {} distinct raters per task",
                self.annotators.len(),
                self.annotators_per_task
            ));
        }
        Ok(())
    }
}
