use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::corpus::SimilarityScore;

/// Fixed-edge histogram. Bin `i` covers `[edges[i], edges[i+1])`; the last
/// bin also includes its upper edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Values that fell outside `[edges[0], edges[last]]`.
    pub out_of_range: u64,
}

impl Histogram {
    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Result<Self, AnalyticsError> {
        if bins == 0 || !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(AnalyticsError::InvalidHistogram(format!(
                "need lo < hi and bins > 0, got [{lo}, {hi}] with {bins} bins"
            )));
        }
        let edges = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + (hi - lo) * i as f64 / bins as f64 })
            .collect();
        Ok(Self {
            edges,
            counts: vec![0; bins],
            out_of_range: 0,
        })
    }

    /// Bins of `width` over `[lo, hi]`; the bin count is rounded.
    pub fn with_width(lo: f64, hi: f64, width: f64) -> Result<Self, AnalyticsError> {
        if width.is_nan() || width <= 0.0 {
            return Err(AnalyticsError::InvalidHistogram(format!("width {width} must be > 0")));
        }
        Self::uniform(lo, hi, ((hi - lo) / width).round().max(1.0) as usize)
    }

    pub fn empty() -> Self {
        Self {
            edges: Vec::new(),
            counts: Vec::new(),
            out_of_range: 0,
        }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_index(&self, v: f64) -> Option<usize> {
        let n = self.bins();
        if n == 0 || !(v >= self.edges[0] && v <= self.edges[n]) {
            return None;
        }
        let width = (self.edges[n] - self.edges[0]) / n as f64;
        let mut i = (((v - self.edges[0]) / width).floor() as usize).min(n - 1);
        // Correct for rounding in the division.
        while i > 0 && v < self.edges[i] {
            i -= 1;
        }
        while i + 1 < n && v >= self.edges[i + 1] {
            i += 1;
        }
        Some(i)
    }

    pub fn add(&mut self, v: f64) {
        match self.bin_index(v) {
            Some(i) => self.counts[i] += 1,
            None => self.out_of_range += 1,
        }
    }
}

/// Whitespace-delimited word count.
pub fn token_count(caption: &str) -> usize {
    caption.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub captions: usize,
    /// `None` when there are no captions.
    pub mean: Option<f64>,
    pub histogram: Histogram,
}

/// Token-length distribution over `bins` equal bins spanning `[0, max]`.
pub fn length_histogram<S: AsRef<str>>(captions: &[S], bins: usize) -> Result<LengthStats, AnalyticsError> {
    if captions.is_empty() {
        return Ok(LengthStats {
            captions: 0,
            mean: None,
            histogram: Histogram::empty(),
        });
    }
    let lengths: Vec<usize> = captions.iter().map(|c| token_count(c.as_ref())).collect();
    let max = *lengths.iter().max().expect("non-empty");
    let mut histogram = Histogram::uniform(0.0, max.max(1) as f64, bins)?;
    for &l in &lengths {
        histogram.add(l as f64);
    }
    Ok(LengthStats {
        captions: lengths.len(),
        mean: Some(lengths.iter().sum::<usize>() as f64 / lengths.len() as f64),
        histogram,
    })
}

/// Similarity-score distribution over `[-1, 1]` with bins of `width`.
pub fn score_histogram(scores: &[SimilarityScore], width: f64) -> Result<Histogram, AnalyticsError> {
    let mut h = Histogram::with_width(-1.0, 1.0, width)?;
    for s in scores {
        h.add(s.cosine);
    }
    Ok(h)
}
