//! Dataset statistics and embedding-space diagnostics.

mod distances;
mod histogram;
mod modality;
mod semantic;

pub use distances::{cluster_distances, ClusterDistances, ClusterOptions, DistanceMode, InterDistance, IntraDistance};
pub use histogram::{length_histogram, score_histogram, token_count, Histogram, LengthStats};
pub use modality::{multimodality_fraction, parse_modality_reply, render_modality_prompt, ModalityKey, ModalityUsage};
pub use semantic::{
    object_presence, render_extraction_prompt, validate_semantic_extraction, ObjectPresence,
    SemanticExtraction, ValidatedExtraction,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("no canonical caption keys found in reply: {0:?}")]
    NoModalities(String),
    #[error("{0} is undefined for an empty input")]
    Empty(&'static str),
    #[error("no JSON object found in reply: {0:?}")]
    NoJson(String),
    #[error("extraction JSON is missing key `{0}` or it is not a list of strings")]
    MissingKey(&'static str),
    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),
    #[error("need at least two categories, got {0}")]
    TooFewCategories(usize),
    #[error("category `{category}` has {members} member(s); intra distance needs at least 2")]
    TooFewMembers { category: String, members: usize },
    #[error("embedding for `{0}` has zero norm")]
    ZeroNorm(String),
    #[error("embedding for `{id}` has dimension {got}, expected {expected}")]
    DimensionMismatch { id: String, got: usize, expected: usize },
    #[error("centroid of category `{0}` is the zero vector")]
    ZeroCentroid(String),
}
