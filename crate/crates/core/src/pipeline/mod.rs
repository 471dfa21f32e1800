//! Per-clip stage DAG execution with caching, resume and failure accounting.

mod backends;
mod config;
mod fusion;
mod plan;
mod prompt;
mod runner;

use std::path::PathBuf;

pub use backends::Backends;
pub use config::{ConfigError, EndpointConfig, MockConfig, MusicInput, PipelineConfig, PoolConfig, PromptPaths};
pub use fusion::{apply_filter, parse_fusion_output, FusionError, SENTINEL};
pub use plan::StagePlan;
pub use prompt::{builtin, FusionPromptInputs, FusionTemplate, PromptTemplate, Prompts, FUSION_PLACEHOLDERS};
pub use runner::{
    ClipResult, ClipStatusLine, ClipVerdict, FailureReport, Pipeline, RunOptions, RunProgress, RunSummary,
    CLIPS_FILE, FAILURES_FILE, SHARDS_DIR, SUMMARY_FILE, CACHE_DIR,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("prompt template `{name}`: {message}")]
    Template { name: String, message: String },
    #[error("stage plan has a cycle through {0:?}")]
    CyclicPlan(Vec<&'static str>),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Jsonl(#[from] crate::jsonl::JsonlError),
    #[error("cannot set up backend {role}: {message}")]
    Backend { role: crate::backends::Role, message: String },
    #[error("{0} already holds a run; pass --resume to continue it")]
    RunExists(PathBuf),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
