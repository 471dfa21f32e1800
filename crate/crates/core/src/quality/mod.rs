//! Human-annotation scoring, inter-annotator agreement and F-beta threshold
//! calibration for the similarity filter.

mod agreement;
mod calibration;
mod fbeta;
mod labels;
mod rubric;

pub use agreement::exact_match_agreement;
pub use calibration::{calibrate, CalibrationReport, CalibrationSample, GridRow, ThresholdGrid};
pub use fbeta::{f_beta, FBeta, F1_05};
pub use labels::{clip_hallucination_scores, paired_labels, AgreementSummary, LabelRecord};
pub use rubric::{
    binarize_hallucination, bucket_score, hallucination_rate, ErrorValue, HumanAnnotation,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QualityError {
    #[error("hallucination rate is undefined for an empty error list")]
    EmptyErrors,
    #[error("rate {0} outside [0, 100]")]
    RateOutOfRange(f64),
    #[error("hallucination score {0} outside 1..=5")]
    ScoreOutOfRange(i64),
    #[error("detailness {0} outside 1..=3")]
    DetailnessOutOfRange(i64),
    #[error("error value {0} is not one of 0, 0.5, 1")]
    InvalidErrorValue(f64),
    #[error("agreement is undefined for an empty pair list")]
    EmptyPairs,
    #[error("negative confusion count")]
    NegativeCount,
    #[error("calibration needs at least one sample")]
    NoSamples,
    #[error("invalid threshold grid: {0}")]
    InvalidGrid(String),
    #[error("cosine {0} is not finite")]
    NonFiniteCosine(f64),
}
