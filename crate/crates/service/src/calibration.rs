use std::collections::BTreeMap;
use std::path::Path;

use capfuse_core::corpus::SimilarityScore;
use capfuse_core::quality::{
    calibrate, clip_hallucination_scores, CalibrationReport, CalibrationSample, HumanAnnotation, ThresholdGrid,
    F1_05,
};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ServiceError};
use crate::persist;

pub const CALIBRATION_FILE: &str = "calibration.json";

/// Request body of `POST /calibration/run`. Grid bounds default to
/// `[-0.2, 1.0]` in steps of 0.005.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationRequest {
    /// Similarity scores to use instead of those from finished jobs.
    #[serde(default)]
    pub scores: Option<Vec<SimilarityScore>>,
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
    #[serde(default)]
    pub step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRun {
    /// Labelled clips with a similarity score.
    pub samples: usize,
    /// Labelled clips without a similarity score; left out.
    pub unscored: Vec<String>,
    pub report: CalibrationReport,
}

impl CalibrationRun {
    pub fn load(path: &Path) -> Result<Option<Self>, ServiceError> {
        match std::fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| ServiceError::Corrupt {
                path: path.display().to_string(),
                line: 0,
                message: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(ServiceError::io(path, e)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ServiceError> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("serialisable");
        bytes.push(b'\n');
        persist::write_atomic(path, &bytes)
    }
}

/// Joins per-clip hallucination scores with cosines and sweeps the grid.
pub fn run(
    annotations: &[HumanAnnotation],
    cosines: &BTreeMap<String, f64>,
    req: &CalibrationRequest,
) -> Result<CalibrationRun, ApiError> {
    let labelled = clip_hallucination_scores(annotations);
    let mut samples = Vec::new();
    let mut unscored = Vec::new();
    for (clip, score) in &labelled {
        match cosines.get(clip) {
            Some(&c) => samples.push(CalibrationSample::new(c, *score)),
            None => unscored.push(clip.clone()),
        }
    }
    if samples.is_empty() {
        return Err(ApiError::conflict(format!(
            "no labelled clip has a similarity score ({} labelled)",
            labelled.len()
        )));
    }
    let ThresholdGrid::Stepped { lo, hi, step } = ThresholdGrid::default() else {
        unreachable!("default grid is stepped")
    };
    let grid = ThresholdGrid::stepped(req.lo.unwrap_or(lo), req.hi.unwrap_or(hi), req.step.unwrap_or(step));
    let report = calibrate(&samples, &grid, F1_05).map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(CalibrationRun {
        samples: samples.len(),
        unscored,
        report,
    })
}
