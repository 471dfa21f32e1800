use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::AnalyticsError;
use crate::vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMode {
    /// Mean cosine distance over all member pairs.
    #[default]
    Pairwise,
    /// Cosine distance to (or between) category centroids of unit vectors.
    Centroid,
}

impl std::str::FromStr for DistanceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pairwise" => Ok(Self::Pairwise),
            "centroid" => Ok(Self::Centroid),
            other => Err(format!("unknown distance mode `{other}` (expected pairwise or centroid)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOptions {
    pub mode: DistanceMode,
    /// Members beyond this count are subsampled per category.
    pub cap_per_category: usize,
    pub seed: u64,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            mode: DistanceMode::Pairwise,
            cap_per_category: 5000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntraDistance {
    pub members: usize,
    /// `None` when the category has fewer than two members.
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterDistance {
    pub a: String,
    pub b: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDistances {
    pub mode: DistanceMode,
    pub categories: Vec<String>,
    pub intra: BTreeMap<String, IntraDistance>,
    /// One entry per unordered category pair, `a < b`.
    pub inter: Vec<InterDistance>,
    /// Labelled clips without an embedding, or embeddings without a label.
    pub unmatched: usize,
}

impl ClusterDistances {
    pub fn intra(&self, category: &str) -> Result<f64, AnalyticsError> {
        let entry = self.intra.get(category).ok_or_else(|| AnalyticsError::TooFewMembers {
            category: category.to_owned(),
            members: 0,
        })?;
        entry.distance.ok_or_else(|| AnalyticsError::TooFewMembers {
            category: category.to_owned(),
            members: entry.members,
        })
    }

    /// Symmetric lookup.
    pub fn inter(&self, a: &str, b: &str) -> Option<f64> {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        self.inter.iter().find(|d| d.a == a && d.b == b).map(|d| d.distance)
    }
}

/// Inter- and intra-category cosine distances between embedding sets.
pub fn cluster_distances(
    embeddings: &BTreeMap<String, Vec<f64>>,
    labels: &BTreeMap<String, String>,
    opts: &ClusterOptions,
) -> Result<ClusterDistances, AnalyticsError> {
    let mut dim = None;
    let mut groups: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    let mut matched = 0;
    for (clip, category) in labels {
        let Some(v) = embeddings.get(clip) else { continue };
        matched += 1;
        let expected = *dim.get_or_insert(v.len());
        if v.len() != expected {
            return Err(AnalyticsError::DimensionMismatch {
                id: clip.clone(),
                got: v.len(),
                expected,
            });
        }
        let unit = vector::normalized(v).ok_or_else(|| AnalyticsError::ZeroNorm(clip.clone()))?;
        groups.entry(category).or_default().push(unit);
    }
    if groups.len() < 2 {
        return Err(AnalyticsError::TooFewCategories(groups.len()));
    }
    let unmatched = labels.len() - matched + embeddings.keys().filter(|k| !labels.contains_key(*k)).count();

    let groups: BTreeMap<&str, Vec<Vec<f64>>> = groups
        .into_iter()
        .map(|(c, members)| (c, subsample(c, members, opts)))
        .collect();

    let (intra, inter) = match opts.mode {
        DistanceMode::Pairwise => pairwise(&groups),
        DistanceMode::Centroid => centroid(&groups)?,
    };
    Ok(ClusterDistances {
        mode: opts.mode,
        categories: groups.keys().map(|c| c.to_string()).collect(),
        intra,
        inter,
        unmatched,
    })
}

fn subsample(category: &str, members: Vec<Vec<f64>>, opts: &ClusterOptions) -> Vec<Vec<f64>> {
    if members.len() <= opts.cap_per_category {
        return members;
    }
    let digest = Sha256::digest(category.as_bytes());
    let salt = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ salt);
    let mut picked = rand::seq::index::sample(&mut rng, members.len(), opts.cap_per_category).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| members[i].clone()).collect()
}

type Distances = (BTreeMap<String, IntraDistance>, Vec<InterDistance>);

fn pairwise(groups: &BTreeMap<&str, Vec<Vec<f64>>>) -> Distances {
    let intra = groups
        .iter()
        .map(|(c, m)| {
            let n = m.len();
            let distance = (n >= 2).then(|| {
                let rows: Vec<f64> = (0..n)
                    .into_par_iter()
                    .map(|i| ((i + 1)..n).map(|j| 1.0 - vector::dot(&m[i], &m[j])).sum())
                    .collect();
                (tree_sum(&rows) / (n * (n - 1) / 2) as f64).max(0.0)
            });
            (c.to_string(), IntraDistance { members: n, distance })
        })
        .collect();
    let inter = category_pairs(groups)
        .map(|(a, ma, b, mb)| {
            let rows: Vec<f64> = ma
                .par_iter()
                .map(|u| mb.iter().map(|v| 1.0 - vector::dot(u, v)).sum())
                .collect();
            InterDistance {
                a: a.to_owned(),
                b: b.to_owned(),
                distance: (tree_sum(&rows) / (ma.len() * mb.len()) as f64).max(0.0),
            }
        })
        .collect();
    (intra, inter)
}

fn centroid(groups: &BTreeMap<&str, Vec<Vec<f64>>>) -> Result<Distances, AnalyticsError> {
    let mut centroids = BTreeMap::new();
    for (c, m) in groups {
        let dim = m[0].len();
        let mean: Vec<f64> = (0..dim)
            .map(|d| tree_sum(&m.iter().map(|v| v[d]).collect::<Vec<_>>()) / m.len() as f64)
            .collect();
        if vector::norm(&mean) == 0.0 {
            return Err(AnalyticsError::ZeroCentroid(c.to_string()));
        }
        centroids.insert(*c, mean);
    }
    let cos_dist = |a: &[f64], b: &[f64]| (1.0 - vector::cosine(a, b).expect("non-zero")).max(0.0);
    let intra = groups
        .iter()
        .map(|(c, m)| {
            let n = m.len();
            let distance = (n >= 2).then(|| {
                let d: Vec<f64> = m.iter().map(|v| cos_dist(v, &centroids[c])).collect();
                tree_sum(&d) / n as f64
            });
            (c.to_string(), IntraDistance { members: n, distance })
        })
        .collect();
    let inter = category_pairs(groups)
        .map(|(a, _, b, _)| InterDistance {
            a: a.to_owned(),
            b: b.to_owned(),
            distance: cos_dist(&centroids[a], &centroids[b]),
        })
        .collect();
    Ok((intra, inter))
}

fn category_pairs<'a>(
    groups: &'a BTreeMap<&'a str, Vec<Vec<f64>>>,
) -> impl Iterator<Item = (&'a str, &'a Vec<Vec<f64>>, &'a str, &'a Vec<Vec<f64>>)> {
    let list: Vec<_> = groups.iter().collect();
    let n = list.len();
    (0..n).flat_map(move |i| {
        let list = list.clone();
        ((i + 1)..n).map(move |j| (*list[i].0, list[i].1, *list[j].0, list[j].1))
    })
}

/// Pairwise (tree) summation; the order depends only on the input length.
fn tree_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => tree_sum(&xs[..n / 2]) + tree_sum(&xs[n / 2..]),
    }
}
