//! Recall@k over precomputed query/candidate embeddings.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::vector;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrievalError {
    #[error("k = {k} is out of range 1..={cols}")]
    KOutOfRange { k: usize, cols: usize },
    #[error("{side} embedding {index} has zero norm")]
    ZeroNorm { side: &'static str, index: usize },
    #[error("{side} embedding {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        side: &'static str,
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("matrix has {values} values, expected {rows}x{cols}")]
    Shape { rows: usize, cols: usize, values: usize },
    #[error("ground truth has {got} rows, expected {rows}")]
    GroundTruthRows { got: usize, rows: usize },
    #[error("query {0} has no ground-truth candidate")]
    NoGroundTruth(usize),
    #[error("query {query} lists candidate {candidate}, but there are only {cols}")]
    GroundTruthOutOfRange { query: usize, candidate: usize, cols: usize },
    #[error("similarity at ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("unknown {kind} id `{id}`")]
    UnknownId { kind: &'static str, id: String },
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("no {0} embeddings")]
    Empty(&'static str),
}

/// Row-major query x candidate similarities with per-query ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    ground_truth: Vec<BTreeSet<usize>>,
}

impl SimilarityMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        ground_truth: Vec<BTreeSet<usize>>,
    ) -> Result<Self, RetrievalError> {
        if values.len() != rows * cols {
            return Err(RetrievalError::Shape { rows, cols, values: values.len() });
        }
        if ground_truth.len() != rows {
            return Err(RetrievalError::GroundTruthRows { got: ground_truth.len(), rows });
        }
        for (query, gt) in ground_truth.iter().enumerate() {
            if gt.is_empty() {
                return Err(RetrievalError::NoGroundTruth(query));
            }
            if let Some(&candidate) = gt.iter().find(|&&c| c >= cols) {
                return Err(RetrievalError::GroundTruthOutOfRange { query, candidate, cols });
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite { row: i / cols, col: i % cols });
        }
        Ok(Self { rows, cols, values, ground_truth })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn ground_truth(&self, row: usize) -> &BTreeSet<usize> {
        &self.ground_truth[row]
    }

    /// Applies `f` to every similarity, keeping the ground truth.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, RetrievalError> {
        Self::new(self.rows, self.cols, self.values.iter().map(|&v| f(v)).collect(), self.ground_truth.clone())
    }

    /// The reverse direction: candidates become queries.
    pub fn transposed(&self) -> Result<Self, RetrievalError> {
        let mut values = Vec::with_capacity(self.values.len());
        for c in 0..self.cols {
            values.extend((0..self.rows).map(|r| self.get(r, c)));
        }
        let mut gt = vec![BTreeSet::new(); self.cols];
        for (r, set) in self.ground_truth.iter().enumerate() {
            for &c in set {
                gt[c].insert(r);
            }
        }
        Self::new(self.cols, self.rows, values, gt)
    }
}

/// One-to-one ground truth: query `i` matches candidate `i`.
pub fn paired_ground_truth(n: usize) -> Vec<BTreeSet<usize>> {
    (0..n).map(|i| BTreeSet::from([i])).collect()
}

/// Cosine similarities of every query against every candidate.
pub fn build_similarity(
    queries: &[Vec<f64>],
    candidates: &[Vec<f64>],
    ground_truth: Vec<BTreeSet<usize>>,
) -> Result<SimilarityMatrix, RetrievalError> {
    let dim = queries.first().or(candidates.first()).map_or(0, Vec::len);
    let unit = |side: &'static str, vs: &[Vec<f64>]| -> Result<Vec<Vec<f64>>, RetrievalError> {
        vs.iter()
            .enumerate()
            .map(|(index, v)| {
                if v.len() != dim {
                    return Err(RetrievalError::DimensionMismatch { side, index, got: v.len(), expected: dim });
                }
                vector::normalized(v).ok_or(RetrievalError::ZeroNorm { side, index })
            })
            .collect()
    };
    let q = unit("query", queries)?;
    let c = unit("candidate", candidates)?;
    let values = q
        .par_iter()
        .flat_map_iter(|u| c.iter().map(move |v| vector::dot(u, v).clamp(-1.0, 1.0)))
        .collect();
    SimilarityMatrix::new(q.len(), c.len(), values, ground_truth)
}

/// Percentage of queries with a ground-truth candidate in the top `k`.
/// Candidates are ranked by descending similarity, ties by lower index.
pub fn recall_at_k(m: &SimilarityMatrix, k: usize) -> Result<f64, RetrievalError> {
    if k == 0 || k > m.cols {
        return Err(RetrievalError::KOutOfRange { k, cols: m.cols });
    }
    if m.rows == 0 {
        return Ok(0.0);
    }
    let hits = (0..m.rows)
        .into_par_iter()
        .filter(|&r| best_rank(m, r) < k)
        .count();
    Ok(100.0 * hits as f64 / m.rows as f64)
}

// Zero-based rank of the best-placed ground-truth candidate.
fn best_rank(m: &SimilarityMatrix, r: usize) -> usize {
    let row = m.row(r);
    m.ground_truth[r]
        .iter()
        .map(|&g| {
            let s = row[g];
            row.iter()
                .enumerate()
                .filter(|&(j, &v)| v > s || (v == s && j < g))
                .count()
        })
        .min()
        .expect("ground truth is non-empty")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingLine {
    pub id: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthLine {
    pub query_id: String,
    pub positives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub direction: String,
    pub k: usize,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub queries: usize,
    pub candidates: usize,
    pub rows: Vec<RecallRow>,
    /// Mean of all reported R@k values.
    pub average: f64,
}

/// Evaluates query-to-candidate retrieval and, optionally, the reverse.
pub fn evaluate(
    queries: &[EmbeddingLine],
    candidates: &[EmbeddingLine],
    truth: &[TruthLine],
    ks: &[usize],
    both_directions: bool,
) -> Result<RetrievalReport, RetrievalError> {
    if queries.is_empty() {
        return Err(RetrievalError::Empty("query"));
    }
    if candidates.is_empty() {
        return Err(RetrievalError::Empty("candidate"));
    }
    let index = |kind: &'static str, lines: &[EmbeddingLine]| -> Result<BTreeMap<String, usize>, RetrievalError> {
        let mut map = BTreeMap::new();
        for (i, l) in lines.iter().enumerate() {
            if map.insert(l.id.clone(), i).is_some() {
                return Err(RetrievalError::DuplicateId { kind, id: l.id.clone() });
            }
        }
        Ok(map)
    };
    let q_index = index("query", queries)?;
    let c_index = index("candidate", candidates)?;
    let mut gt = vec![BTreeSet::new(); queries.len()];
    for t in truth {
        let q = *q_index
            .get(&t.query_id)
            .ok_or_else(|| RetrievalError::UnknownId { kind: "query", id: t.query_id.clone() })?;
        for p in &t.positives {
            let c = *c_index
                .get(p)
                .ok_or_else(|| RetrievalError::UnknownId { kind: "candidate", id: p.clone() })?;
            gt[q].insert(c);
        }
    }
    let qv: Vec<Vec<f64>> = queries.iter().map(|l| l.vector.clone()).collect();
    let cv: Vec<Vec<f64>> = candidates.iter().map(|l| l.vector.clone()).collect();
    let forward = build_similarity(&qv, &cv, gt)?;
    let mut rows = Vec::new();
    for &k in ks {
        rows.push(RecallRow { direction: "query_to_candidate".into(), k, recall: recall_at_k(&forward, k)? });
    }
    if both_directions {
        let backward = forward.transposed()?;
        for &k in ks {
            rows.push(RecallRow { direction: "candidate_to_query".into(), k, recall: recall_at_k(&backward, k)? });
        }
    }
    let average = if rows.is_empty() { 0.0 } else { rows.iter().map(|r| r.recall).sum::<f64>() / rows.len() as f64 };
    Ok(RetrievalReport { queries: queries.len(), candidates: candidates.len(), rows, average })
}
