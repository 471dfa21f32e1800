use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{bucket_score, exact_match_agreement, ErrorValue, HumanAnnotation, QualityError};

/// One line of a labels JSONL file, as submitted by a rater.
///
/// `phrase_errors` holds one value per flagged phrase followed by one value
/// per entry of `extra_units` (the rater-added content units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub clip_id: String,
    pub annotator_id: String,
    pub detailness: i64,
    pub phrase_errors: Vec<f64>,
    #[serde(default)]
    pub extra_units: Vec<String>,
}

impl LabelRecord {
    pub fn to_annotation(&self) -> Result<HumanAnnotation, QualityError> {
        let errors = self
            .phrase_errors
            .iter()
            .map(|v| ErrorValue::try_from(*v))
            .collect::<Result<Vec<_>, _>>()?;
        HumanAnnotation::new(
            self.clip_id.clone(),
            self.annotator_id.clone(),
            self.detailness,
            errors,
            self.extra_units.len(),
        )
    }
}

/// Per-clip hallucination score for calibration: the mean of the raters'
/// hallucination rates, bucketed.
pub fn clip_hallucination_scores(annotations: &[HumanAnnotation]) -> BTreeMap<String, u8> {
    let mut rates: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for a in annotations {
        rates.entry(&a.clip_id).or_default().push(a.hallucination_rate);
    }
    rates
        .into_iter()
        .map(|(clip, r)| {
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            (clip.to_owned(), bucket_score(mean.clamp(0.0, 100.0)).expect("clamped"))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub pairs: usize,
    pub detailness: f64,
    /// Agreement after binarising scores (<= 2 -> 1, else 0).
    pub hallucination: f64,
}

/// Exact-match agreement over clips rated by at least two raters, using the
/// first two raters by id.
pub fn paired_labels(annotations: &[HumanAnnotation]) -> Option<AgreementSummary> {
    let mut by_clip: BTreeMap<&str, Vec<&HumanAnnotation>> = BTreeMap::new();
    for a in annotations {
        by_clip.entry(&a.clip_id).or_default().push(a);
    }
    let mut detail = Vec::new();
    let mut halluc = Vec::new();
    for (_, mut raters) in by_clip {
        if raters.len() < 2 {
            continue;
        }
        raters.sort_by(|a, b| a.annotator_id.cmp(&b.annotator_id));
        detail.push((raters[0].detailness, raters[1].detailness));
        halluc.push((raters[0].hallucination_label(), raters[1].hallucination_label()));
    }
    Some(AgreementSummary {
        pairs: detail.len(),
        detailness: exact_match_agreement(&detail).ok()?,
        hallucination: exact_match_agreement(&halluc).ok()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(clip: &str, who: &str, detail: i64, errors: &[f64]) -> HumanAnnotation {
        LabelRecord {
            clip_id: clip.into(),
            annotator_id: who.into(),
            detailness: detail,
            phrase_errors: errors.to_vec(),
            extra_units: vec![],
        }
        .to_annotation()
        .unwrap()
    }

    #[test]
    fn record_rejects_bad_values() {
        let bad = LabelRecord {
            clip_id: "c".into(),
            annotator_id: "a".into(),
            detailness: 2,
            phrase_errors: vec![0.0, 0.7],
            extra_units: vec![],
        };
        assert_eq!(bad.to_annotation(), Err(QualityError::InvalidErrorValue(0.7)));
    }

    #[test]
    fn extra_units_are_counted() {
        let r = LabelRecord {
            clip_id: "c".into(),
            annotator_id: "a".into(),
            detailness: 2,
            phrase_errors: vec![0.0, 1.0, 1.0],
            extra_units: vec!["metallic clank".into()],
        };
        let a = r.to_annotation().unwrap();
        assert_eq!(a.extra_units, 1);
        assert!((a.hallucination_rate - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mean_rate_per_clip() {
        let anns = [rec("c", "a", 2, &[0.0, 0.0]), rec("c", "b", 2, &[1.0, 0.0])];
        // Mean rate 25% -> score 4.
        assert_eq!(clip_hallucination_scores(&anns)["c"], 4);
    }

    #[test]
    fn pairs_use_first_two_raters() {
        let anns = [
            rec("c1", "b", 3, &[0.0]),
            rec("c1", "a", 3, &[1.0]),
            rec("c2", "a", 2, &[0.0]),
            rec("c2", "b", 1, &[0.0]),
            rec("c3", "a", 1, &[0.0]),
        ];
        let s = paired_labels(&anns).unwrap();
        assert_eq!(s.pairs, 2);
        assert_eq!(s.detailness, 0.5);
        assert_eq!(s.hallucination, 0.5);
        assert!(paired_labels(&anns[4..]).is_none());
    }
}
