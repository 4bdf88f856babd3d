//! A gateway and its verifier nodes wired together in one process.

use std::collections::HashSet;
use std::sync::{Arc, Mutex};

use crate::gateway::{
    AuthRequest, AuthResponse, Challenge, EnrollRequest, EnrollResponse, Gateway, GatewayConfig,
    GatewayError, RegisteredNode, RevokeRequest,
};
use crate::identity::{seed_from_label, Did, KeyPair};
use crate::node::VerifierNode;
use crate::trust::{BlobStore, CacheMode, LedgerView, LedgerWrite, RevocationBlock};

/// Cache settings applied to every node's ledger view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewSettings {
    pub poll_interval_ms: u64,
    pub ttl_ms: u64,
    pub mode: CacheMode,
}

impl Default for ViewSettings {
    fn default() -> Self {
        ViewSettings {
            poll_interval_ms: crate::trust::view::DEFAULT_POLL_INTERVAL_MS,
            ttl_ms: crate::trust::view::DEFAULT_TTL_MS,
            mode: CacheMode::Polling,
        }
    }
}

/// Node signing keys derived from a cluster label and the node index.
pub fn node_keys(cluster_label: &str, index: usize) -> KeyPair {
    KeyPair::from_seed(&seed_from_label(&format!("{cluster_label}/node-{index}")))
}

pub fn node_id(index: usize) -> String {
    format!("node-{index}")
}

pub struct InProcessCluster {
    pub gateway: Gateway,
    pub nodes: Vec<VerifierNode>,
    pub store: Arc<dyn BlobStore>,
    pub ledger: Arc<dyn LedgerWrite>,
    offline: Mutex<HashSet<usize>>,
}

impl InProcessCluster {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cluster_label: &str,
        n_nodes: usize,
        config: GatewayConfig,
        views: ViewSettings,
        store: Arc<dyn BlobStore>,
        ledger: Arc<dyn LedgerWrite>,
        mac_key: Vec<u8>,
        seed: Option<[u8; 32]>,
        now_ms: u64,
    ) -> Result<Self, GatewayError> {
        let nodes: Vec<VerifierNode> = (0..n_nodes)
            .map(|i| {
                let view = LedgerView::fetch(
                    node_id(i),
                    ledger.as_ref(),
                    now_ms,
                    views.poll_interval_ms,
                    views.ttl_ms,
                    views.mode,
                );
                VerifierNode::new(node_id(i), node_keys(cluster_label, i), store.clone(), view)
            })
            .collect();
        let registry = nodes
            .iter()
            .map(|n| RegisteredNode {
                node_id: n.node_id().to_owned(),
                public_key: n.public_key(),
            })
            .collect();
        let gateway = Gateway::new(config, mac_key, registry, store.clone(), seed)?;
        Ok(InProcessCluster {
            gateway,
            nodes,
            store,
            ledger,
            offline: Mutex::new(HashSet::new()),
        })
    }

    /// Make node `index` stop answering (its vote times out).
    pub fn set_offline(&self, index: usize, offline: bool) {
        let mut set = self.offline.lock().expect("offline lock");
        if offline {
            set.insert(index);
        } else {
            set.remove(&index);
        }
    }

    pub fn epoch(&self) -> u64 {
        self.ledger.height()
    }

    pub fn enroll(&self, req: &EnrollRequest) -> Result<EnrollResponse, GatewayError> {
        self.gateway.handle_enroll(req)
    }

    pub fn challenge(&self, subject: &Did, now_ms: u64) -> Result<Challenge, GatewayError> {
        self.gateway.issue_challenge(subject, now_ms)
    }

    pub fn authenticate(
        &self,
        req: &AuthRequest,
        now_ms: u64,
    ) -> Result<AuthResponse, GatewayError> {
        let offline = self.offline.lock().expect("offline lock").clone();
        self.gateway.handle_auth(req, now_ms, |task, _| {
            self.nodes
                .iter()
                .enumerate()
                .filter(|(i, _)| !offline.contains(i))
                .map(|(_, n)| {
                    n.poll(self.ledger.as_ref(), now_ms);
                    n.handle_verify_task(task, self.ledger.as_ref(), now_ms)
                })
                .collect()
        })
    }

    /// Authorize, commit, and notify every node of the new block.
    pub fn revoke(
        &self,
        req: &RevokeRequest,
        now_ms: u64,
    ) -> Result<RevocationBlock, GatewayError> {
        self.gateway.authorize_revoke(req)?;
        let block = self
            .ledger
            .commit_revocation(req.credential_id, req.reason, now_ms)?;
        for n in &self.nodes {
            n.notify(self.ledger.as_ref(), now_ms);
        }
        Ok(block)
    }

    /// Bring every node's view up to the ledger head.
    pub fn refresh_all(&self, now_ms: u64) {
        for n in &self.nodes {
            n.force_refresh(self.ledger.as_ref(), now_ms);
        }
    }
}
