use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use capfuse_core::backends::MockBackend;
use capfuse_core::jsonl;
use capfuse_service::{mock_backend, AppState, ServiceConfig, TaskImport};

use crate::{MockBackendArgs, ServeArgs};

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")
}

async fn shutdown_signal() {
    if let Err(e) = tokio::signal::ctrl_c().await {
        tracing::error!(error = %e, "cannot listen for ctrl-c");
        std::future::pending::<()>().await;
    }
    tracing::info!("shutting down");
}

fn read_tasks(path: &std::path::Path) -> anyhow::Result<Vec<TaskImport>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        return Ok(jsonl::read(path)?);
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn serve(args: ServeArgs) -> anyhow::Result<()> {
    let config = ServiceConfig::load(&args.config)?;
    let state = AppState::open(config)?;
    if let Some(path) = &args.tasks {
        let outcome = state
            .import_tasks(read_tasks(path)?)
            .map_err(|e| anyhow::anyhow!("importing {}: {}", path.display(), e.message))?;
        tracing::info!(imported = outcome.imported, unchanged = outcome.unchanged, "imported tasks");
    }
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.addr)
            .await
            .with_context(|| format!("binding {}", args.addr))?;
        println!("listening on http://{}", listener.local_addr()?);
        capfuse_service::serve(state, listener, shutdown_signal()).await?;
        Ok(())
    })
}

pub fn mock_backend(args: MockBackendArgs) -> anyhow::Result<()> {
    let mut mock = MockBackend::new(args.seed).with_embed_dim(args.embed_dim);
    if let Some(dir) = args.fixtures {
        mock = mock.with_fixtures(dir);
    }
    if args.latency_ms > 0 {
        mock = mock.with_latency(Duration::from_millis(args.latency_ms));
    }
    let mock = Arc::new(mock);
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.addr)
            .await
            .with_context(|| format!("binding {}", args.addr))?;
        println!("listening on http://{}", listener.local_addr()?);
        mock_backend::serve(mock, listener, shutdown_signal()).await?;
        Ok(())
    })
}
