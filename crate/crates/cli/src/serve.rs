//! serve: the triage HTTP service over a session directory.

use std::path::PathBuf;
use std::sync::Arc;

use mtriage_core::triage::{ExclusionPolicy, QueueMode, TriageStore};
use mtriage_server::AppState;

use crate::config::Config;
use crate::data;
use crate::CliError;

fn policy(cfg: &Config) -> Result<ExclusionPolicy, CliError> {
    match cfg.raw("serve.policy") {
        "confirmed" => Ok(ExclusionPolicy::Confirmed),
        "reviewed" => Ok(ExclusionPolicy::ReviewedUnion),
        other => Err(CliError::Config(format!("serve.policy {other:?}: expected confirmed or reviewed"))),
    }
}

pub fn queue_mode(cfg: &Config) -> Result<QueueMode, CliError> {
    Ok(match cfg.optional::<f64>("serve.fraction")? {
        Some(fraction) => QueueMode::EnsembleTopFraction { fraction },
        None => QueueMode::PerScoreUnion { top_n: cfg.get("serve.top_n")? },
    })
}

/// Opens (or starts) the session and loads scores into a round that has none.
pub fn open_store(cfg: &Config) -> Result<TriageStore, CliError> {
    let dir = match cfg.raw("session") {
        "" => PathBuf::from(cfg.raw("out")).join("session"),
        s => PathBuf::from(s),
    };
    std::fs::create_dir_all(&dir)?;
    let id = dir.file_name().map_or_else(|| "session".into(), |n| n.to_string_lossy().into_owned());
    let mut store = TriageStore::open_or_create(&dir, &id, policy(cfg)?)?;
    if store.session().mode.is_none() && !cfg.raw("scores").is_empty() {
        let (_, m) = data::scores(cfg)?;
        let n = store.load_scores(&m, queue_mode(cfg)?)?;
        log::info!("round {}: {n} images queued", store.session().round);
    }
    Ok(store)
}

pub fn serve(cfg: &Config) -> Result<(), CliError> {
    let store = open_store(cfg)?;
    let corpus = cfg.optional_input("corpus")?;
    let state = Arc::new(AppState::new(store, corpus.as_deref())?);
    let addr = cfg.raw("serve.addr").to_string();
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await?;
        println!("http://{}", listener.local_addr()?);
        mtriage_server::serve(listener, state).await
    })?;
    Ok(())
}
