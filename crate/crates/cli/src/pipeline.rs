use anyhow::Context;
use capfuse_core::corpus::load_manifest;
use capfuse_core::pipeline::{Backends, Pipeline, PipelineConfig, RunOptions};

use crate::RunArgs;

pub fn run(args: RunArgs) -> anyhow::Result<()> {
    let mut config = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.mock.seed = seed;
    }
    let records = load_manifest(&args.manifest)?;
    tracing::info!(clips = records.len(), manifest = %args.manifest.display(), "loaded manifest");
    let backends = Backends::from_config(&config)?;
    let cache = args.cache.clone().unwrap_or_else(|| args.out.join("cache"));
    let mut pipeline = Pipeline::new(config, backends, &cache).context("opening stage cache")?;
    let opts = RunOptions {
        resume: args.resume,
        limit: args.limit,
        ..RunOptions::default()
    };
    let summary = pipeline.run(&records, &args.out, &opts)?;
    tracing::info!(
        kept = summary.kept,
        filtered = summary.filtered,
        uncertain = summary.uncertain,
        failed = summary.failed,
        cache_hits = summary.cache_hits,
        "run finished"
    );
    crate::emit_json(&summary, None)?;
    if summary.ingested > 0 && summary.failed == summary.ingested {
        anyhow::bail!(
            "every clip failed; see {}",
            args.out.join(capfuse_core::pipeline::FAILURES_FILE).display()
        );
    }
    Ok(())
}
