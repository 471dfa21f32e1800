use serde::{Deserialize, Serialize};

use super::QualityError;

/// Per-phrase judgment: correct (0), unverifiable (0.5), hallucination (1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum ErrorValue {
    Correct,
    Unverifiable,
    Hallucination,
}

impl ErrorValue {
    /// Value in half units, so sums stay exact.
    pub fn halves(self) -> u64 {
        match self {
            ErrorValue::Correct => 0,
            ErrorValue::Unverifiable => 1,
            ErrorValue::Hallucination => 2,
        }
    }

    pub fn value(self) -> f64 {
        self.halves() as f64 / 2.0
    }
}

impl TryFrom<f64> for ErrorValue {
    type Error = QualityError;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        if v == 0.0 {
            Ok(ErrorValue::Correct)
        } else if v == 0.5 {
            Ok(ErrorValue::Unverifiable)
        } else if v == 1.0 {
            Ok(ErrorValue::Hallucination)
        } else {
            Err(QualityError::InvalidErrorValue(v))
        }
    }
}

impl From<ErrorValue> for f64 {
    fn from(v: ErrorValue) -> f64 {
        v.value()
    }
}

/// `100 * sum(errors) / len(errors)`, evaluated from exact integer half
/// units with a single rounding.
pub fn hallucination_rate(errors: &[ErrorValue]) -> Result<f64, QualityError> {
    if errors.is_empty() {
        return Err(QualityError::EmptyErrors);
    }
    let halves: u64 = errors.iter().map(|e| e.halves()).sum();
    Ok((100 * halves) as f64 / (2 * errors.len() as u64) as f64)
}

/// Maps a hallucination rate to the 1-5 score.
///
/// Intervals are half-open on the left: `[0,10]` -> 5, `(10,25]` -> 4,
/// `(25,40]` -> 3, `(40,50]` -> 2, `(50,100]` -> 1.
pub fn bucket_score(rate: f64) -> Result<u8, QualityError> {
    if !(0.0..=100.0).contains(&rate) {
        return Err(QualityError::RateOutOfRange(rate));
    }
    Ok(match rate {
        r if r <= 10.0 => 5,
        r if r <= 25.0 => 4,
        r if r <= 40.0 => 3,
        r if r <= 50.0 => 2,
        _ => 1,
    })
}

/// 1 for notable hallucination (score <= 2), else 0.
pub fn binarize_hallucination(score: i64) -> Result<u8, QualityError> {
    match score {
        1 | 2 => Ok(1),
        3..=5 => Ok(0),
        other => Err(QualityError::ScoreOutOfRange(other)),
    }
}

/// One rater's judgment of one caption, with derived scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanAnnotation {
    pub clip_id: String,
    pub annotator_id: String,
    pub detailness: u8,
    /// Values for the flagged phrases followed by annotator-added units.
    pub phrase_errors: Vec<ErrorValue>,
    pub extra_units: usize,
    pub hallucination_rate: f64,
    pub hallucination_score: u8,
}

impl HumanAnnotation {
    /// Validates inputs and derives rate and score. Every value in
    /// `phrase_errors` counts as one content unit, extra units included.
    pub fn new(
        clip_id: impl Into<String>,
        annotator_id: impl Into<String>,
        detailness: i64,
        phrase_errors: Vec<ErrorValue>,
        extra_units: usize,
    ) -> Result<Self, QualityError> {
        if !(1..=3).contains(&detailness) {
            return Err(QualityError::DetailnessOutOfRange(detailness));
        }
        let rate = hallucination_rate(&phrase_errors)?;
        Ok(Self {
            clip_id: clip_id.into(),
            annotator_id: annotator_id.into(),
            detailness: detailness as u8,
            phrase_errors,
            extra_units,
            hallucination_rate: rate,
            hallucination_score: bucket_score(rate)?,
        })
    }

    pub fn hallucination_label(&self) -> u8 {
        binarize_hallucination(self.hallucination_score as i64).expect("score is in range")
    }
}
