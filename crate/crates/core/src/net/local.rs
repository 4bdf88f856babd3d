//! Local mode: an in-process gateway and nodes over a deployment's data
//! directory, for one-shot CLI commands.

use std::io;
use std::sync::Arc;

use thiserror::Error;

use super::config::{ConfigError, DeployConfig};
use super::server::open_shared;
use crate::cluster::{InProcessCluster, ViewSettings};
use crate::gateway::GatewayError;
use crate::trust::{BlobStore, LedgerWrite};

#[derive(Debug, Error)]
pub enum LocalError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Open the shared store and ledger under `cfg.data_dir` with freshly
/// fetched node views.
pub fn open_local(cfg: &DeployConfig, now_ms: u64) -> Result<InProcessCluster, LocalError> {
    let (store, ledger) = open_shared(cfg)?;
    let views = ViewSettings {
        poll_interval_ms: cfg.nodes.poll_interval_ms,
        ttl_ms: cfg.nodes.ttl_ms,
        mode: cfg.nodes.cache_mode,
    };
    Ok(InProcessCluster::new(
        &cfg.cluster_label,
        cfg.n_nodes(),
        cfg.gateway_config(),
        views,
        store as Arc<dyn BlobStore>,
        Arc::new(ledger) as Arc<dyn LedgerWrite>,
        cfg.mac_key()?,
        None,
        now_ms,
    )?)
}
