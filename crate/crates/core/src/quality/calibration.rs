use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{binarize_hallucination, FBeta, QualityError};

/// A caption's similarity score paired with its human hallucination score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub cosine: f64,
    pub hallucination_score: u8,
}

impl CalibrationSample {
    pub fn new(cosine: f64, hallucination_score: u8) -> Self {
        Self {
            cosine,
            hallucination_score,
        }
    }
}

/// Candidate thresholds to sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdGrid {
    /// `lo, lo+step, ..., <= hi`, generated on a decimal lattice so that
    /// values such as 0.08 are represented exactly as their literal.
    Stepped { lo: f64, hi: f64, step: f64 },
    Explicit(Vec<f64>),
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        ThresholdGrid::Stepped {
            lo: -0.2,
            hi: 1.0,
            step: 0.005,
        }
    }
}

impl ThresholdGrid {
    pub fn stepped(lo: f64, hi: f64, step: f64) -> Self {
        ThresholdGrid::Stepped { lo, hi, step }
    }

    /// Every distinct sample cosine plus one point above the maximum: the
    /// smallest set realising every possible split of the samples.
    pub fn from_samples(samples: &[CalibrationSample]) -> Self {
        let mut v: Vec<f64> = samples.iter().map(|s| s.cosine).collect();
        if let Some(max) = v.iter().copied().reduce(f64::max) {
            v.push(max.next_up());
        }
        ThresholdGrid::Explicit(v)
    }

    /// Sorted, de-duplicated thresholds.
    pub fn thresholds(&self) -> Result<Vec<f64>, QualityError> {
        let mut out = match *self {
            ThresholdGrid::Stepped { lo, hi, step } => {
                if !(step > 0.0 && step.is_finite() && lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(QualityError::InvalidGrid(format!(
                        "need finite lo <= hi and step > 0, got [{lo}, {hi}] step {step}"
                    )));
                }
                let scale = decimal_scale(step).ok_or_else(|| {
                    QualityError::InvalidGrid(format!("step {step} has more than 12 decimals"))
                })?;
                let step_units = (step * scale).round() as i64;
                let lo_units = (lo * scale).round() as i64;
                let hi_units = (hi * scale).round() as i64;
                let count = (hi_units - lo_units) / step_units + 1;
                if count > 10_000_000 {
                    return Err(QualityError::InvalidGrid(format!("{count} grid points")));
                }
                (0..count)
                    .map(|i| (lo_units + i * step_units) as f64 / scale)
                    .collect::<Vec<f64>>()
            }
            ThresholdGrid::Explicit(ref v) => {
                if let Some(bad) = v.iter().find(|t| !t.is_finite()) {
                    return Err(QualityError::InvalidGrid(format!("threshold {bad} is not finite")));
                }
                v.clone()
            }
        };
        if out.is_empty() {
            return Err(QualityError::InvalidGrid("no thresholds".into()));
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        Ok(out)
    }
}

fn decimal_scale(step: f64) -> Option<f64> {
    (0..=12).map(|k| 10f64.powi(k)).find(|scale| {
        let scaled = step * scale;
        (scaled - scaled.round()).abs() <= 1e-9 * scaled.max(1.0) && scaled.round() >= 1.0
    })
}

/// Confusion counts and scores at one threshold. Positive = discard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub grid: Vec<GridRow>,
    pub beta: f64,
    pub chosen_threshold: f64,
    pub chosen_f_beta: f64,
    pub exact_match_rate: f64,
    pub filter_rate: f64,
    pub samples: usize,
    pub positives: usize,
    /// All labels belong to one class; F-beta is 0 wherever undefined.
    pub degenerate: bool,
}

impl CalibrationReport {
    pub fn chosen_row(&self) -> &GridRow {
        self.grid
            .iter()
            .find(|r| r.threshold == self.chosen_threshold)
            .expect("chosen threshold is on the grid")
    }

    /// Fixed-width text table of the sweep with the chosen row marked.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>10} {:>7} {:>7} {:>7} {:>7} {:>9} {:>9} {:>9}",
            "threshold", "TP", "FP", "FN", "TN", "precision", "recall", "F_beta"
        );
        for r in &self.grid {
            let mark = if r.threshold == self.chosen_threshold { " *" } else { "" };
            let _ = writeln!(
                out,
                "{:>10.4} {:>7} {:>7} {:>7} {:>7} {:>9.4} {:>9.4} {:>9.4}{mark}",
                r.threshold, r.tp, r.fp, r.fn_, r.tn, r.precision, r.recall, r.f_beta
            );
        }
        let _ = writeln!(
            out,
            "beta={} chosen_threshold={} F={:.6} exact_match_rate={:.4} filter_rate={:.4} samples={} positives={}{}",
            self.beta,
            self.chosen_threshold,
            self.chosen_f_beta,
            self.exact_match_rate,
            self.filter_rate,
            self.samples,
            self.positives,
            if self.degenerate { " (degenerate labels)" } else { "" }
        );
        out
    }
}

/// Sweeps `grid` and picks the threshold maximising F-beta for the
/// "discard" class (hallucination score <= 2). A caption is predicted
/// positive when `cosine < threshold`. Ties go to the lowest threshold.
pub fn calibrate(
    samples: &[CalibrationSample],
    grid: &ThresholdGrid,
    beta: FBeta,
) -> Result<CalibrationReport, QualityError> {
    if samples.is_empty() {
        return Err(QualityError::NoSamples);
    }
    let mut sorted: Vec<(f64, bool)> = Vec::with_capacity(samples.len());
    for s in samples {
        if !s.cosine.is_finite() {
            return Err(QualityError::NonFiniteCosine(s.cosine));
        }
        let positive = binarize_hallucination(s.hallucination_score as i64)? == 1;
        sorted.push((s.cosine, positive));
    }
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let thresholds = grid.thresholds()?;
    let (min, max) = (sorted[0].0, sorted[sorted.len() - 1].0);
    if let ThresholdGrid::Stepped { .. } = grid {
        if thresholds[0] > min || thresholds[thresholds.len() - 1] < max {
            return Err(QualityError::InvalidGrid(format!(
                "grid [{}, {}] does not span sample cosines [{min}, {max}]",
                thresholds[0],
                thresholds[thresholds.len() - 1]
            )));
        }
    }

    let total = sorted.len() as u64;
    let positives = sorted.iter().filter(|(_, p)| *p).count() as u64;
    let negatives = total - positives;

    let mut grid_rows = Vec::with_capacity(thresholds.len());
    let (mut idx, mut tp, mut fp) = (0usize, 0u64, 0u64);
    for &t in &thresholds {
        while idx < sorted.len() && sorted[idx].0 < t {
            if sorted[idx].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            idx += 1;
        }
        let fn_ = positives - tp;
        let tn = negatives - fp;
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        grid_rows.push(GridRow {
            threshold: t,
            tp,
            fp,
            fn_,
            tn,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f_beta: beta.score(tp, fp, fn_),
        });
    }

    let best = grid_rows
        .iter()
        .fold(None::<&GridRow>, |best, row| match best {
            Some(b) if b.f_beta >= row.f_beta => Some(b),
            _ => Some(row),
        })
        .expect("grid is non-empty");

    Ok(CalibrationReport {
        beta: beta.value(),
        chosen_threshold: best.threshold,
        chosen_f_beta: best.f_beta,
        exact_match_rate: (best.tp + best.tn) as f64 / total as f64,
        filter_rate: (best.tp + best.fp) as f64 / total as f64,
        samples: samples.len(),
        positives: positives as usize,
        degenerate: positives == 0 || negatives == 0,
        grid: grid_rows,
    })
}
