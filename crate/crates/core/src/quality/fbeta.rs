use serde::{Deserialize, Serialize};

use super::QualityError;

/// A rational beta `num / den`, kept exact so the F-score can be evaluated
/// from integer confusion counts with one final rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FBeta {
    pub num: u64,
    pub den: u64,
}

/// beta = 1.05, weighting recall slightly above precision.
pub const F1_05: FBeta = FBeta { num: 21, den: 20 };

impl FBeta {
    pub const fn new(num: u64, den: u64) -> Self {
        Self { num, den }
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// F-beta from confusion counts, or 0 when precision or recall has a
    /// zero denominator.
    ///
    /// `(1+b^2)PR / (b^2 P + R)` with `P = tp/(tp+fp)` and `R = tp/(tp+fn)`
    /// simplifies to `(n^2+d^2) tp / ((n^2+d^2) tp + n^2 fn + d^2 fp)` for
    /// `b = n/d`.
    pub fn score(self, tp: u64, fp: u64, fn_: u64) -> f64 {
        if tp + fp == 0 || tp + fn_ == 0 {
            return 0.0;
        }
        let n2 = (self.num as u128).pow(2);
        let d2 = (self.den as u128).pow(2);
        let numerator = (n2 + d2) * tp as u128;
        let denominator = numerator + n2 * fn_ as u128 + d2 * fp as u128;
        numerator as f64 / denominator as f64
    }
}

/// F-beta over signed counts; negative counts are rejected.
pub fn f_beta(tp: i64, fp: i64, fn_: i64, beta: FBeta) -> Result<f64, QualityError> {
    if tp < 0 || fp < 0 || fn_ < 0 {
        return Err(QualityError::NegativeCount);
    }
    Ok(beta.score(tp as u64, fp as u64, fn_ as u64))
}
