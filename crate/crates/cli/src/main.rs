use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

mod analysis;
mod pipeline;
mod quality;
mod server;

/// Multimodal caption pipeline, calibration and dataset analysis.
#[derive(Debug, Parser)]
#[command(name = "capfuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the caption pipeline over a manifest.
    Run(RunArgs),
    /// Sweep the similarity threshold against human labels.
    Calibrate(CalibrateArgs),
    /// Dataset statistics over finished shards.
    Stats(StatsArgs),
    /// Inter- and intra-category embedding distances.
    Distances(DistancesArgs),
    /// Recall@k for text-to-audio retrieval.
    EvalRetrieval(RetrievalArgs),
    /// Serve the job, annotation and calibration API.
    Serve(ServeArgs),
    /// Serve the deterministic mock backend over HTTP.
    MockBackend(MockBackendArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Pipeline config; built-in defaults (all mock backends) when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Continue a previous, possibly partial, run in `out`.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    limit: Option<usize>,
    /// Seed for the mock backends.
    #[arg(long)]
    seed: Option<u64>,
    /// Stage cache directory; `<out>/cache` by default.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// JSONL of `{clip_id, cosine}`.
    #[arg(long)]
    scores: PathBuf,
    /// JSONL of rater labels.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 0.005)]
    step: f64,
    #[arg(long, default_value_t = -0.2, allow_hyphen_values = true)]
    lo: f64,
    #[arg(long, default_value_t = 1.0)]
    hi: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Directory of `shard-*.jsonl` files (a run's `shards/`).
    #[arg(long)]
    shards: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Ask the synthesizer which cue captions each final caption used.
    #[arg(long)]
    with_modality: bool,
    /// Ask the synthesizer to extract instruments, emotions, genres and scenes.
    #[arg(long)]
    with_semantic: bool,
    /// Pipeline config naming the synthesizer endpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    length_bins: usize,
    #[arg(long, default_value_t = 0.05)]
    score_width: f64,
}

#[derive(Debug, Args)]
struct DistancesArgs {
    /// JSONL of `{id, vector}`.
    #[arg(long)]
    embeddings: PathBuf,
    /// JSONL of `{clip_id, category}`.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value = "pairwise")]
    mode: capfuse_core::analytics::DistanceMode,
    #[arg(long, default_value_t = 5000)]
    cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RetrievalArgs {
    /// JSONL of `{id, vector}` for text queries.
    #[arg(long)]
    queries: PathBuf,
    /// JSONL of `{id, vector}` for audio candidates.
    #[arg(long)]
    candidates: PathBuf,
    /// JSONL of `{query_id, positives}`.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    k: Vec<usize>,
    /// Also report candidate-to-query recall.
    #[arg(long)]
    both_directions: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Service config JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Annotation tasks to import before serving (JSON array or JSONL).
    #[arg(long)]
    tasks: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MockBackendArgs {
    #[arg(long, default_value = "127.0.0.1:8900")]
    addr: SocketAddr,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    embed_dim: usize,
    /// Added delay per request.
    #[arg(long, default_value_t = 0)]
    latency_ms: u64,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => pipeline::run(a),
        Command::Calibrate(a) => quality::calibrate(a),
        Command::Stats(a) => analysis::stats(a),
        Command::Distances(a) => analysis::distances(a),
        Command::EvalRetrieval(a) => analysis::eval_retrieval(a),
        Command::Serve(a) => server::serve(a),
        Command::MockBackend(a) => server::mock_backend(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Pretty JSON to `path`, or to stdout when `path` is `None`.
fn emit_json<T: serde::Serialize>(value: &T, path: Option<&std::path::Path>) -> anyhow::Result<()> {
    use anyhow::Context;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
