//! Independent verifier nodes.
//!
//! A node checks the proof, confirms the credential against its metadata
//! document in the content store, and consults its own cached ledger view.
//! It votes `Accept` only when all three pass; every internal failure becomes
//! a `Reject`. A single vote never grants access on its own.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::canonical::{self, hex_bytes};
use crate::credential::CredentialMetadata;
use crate::identity::{KeyPair, PublicKey};
use crate::proof::{verify_proof, AuthProof, RejectReason, Verdict, DEFAULT_EPOCH_TOLERANCE};
use crate::trust::{
    is_revoked, notify_view, refresh_view, BlobStore, LedgerRead, LedgerView, StoreError,
};

pub const DEFAULT_NODE_COUNT: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyTask {
    pub task_id: u64,
    pub proof: AuthProof,
    pub subject_public_key: PublicKey,
    #[serde(with = "hex_bytes")]
    pub expected_challenge: [u8; 32],
    pub deadline: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyResult {
    pub task_id: u64,
    pub node_id: String,
    pub vote: Verdict,
    pub as_of_height: u64,
    #[serde(with = "hex_bytes")]
    pub node_signature: [u8; 64],
}

#[derive(Serialize)]
struct ResultBody<'a> {
    task_id: u64,
    node_id: &'a str,
    vote: &'a Verdict,
    as_of_height: u64,
}

impl VerifyResult {
    pub fn signing_bytes(&self) -> Vec<u8> {
        canonical::to_canonical(&ResultBody {
            task_id: self.task_id,
            node_id: &self.node_id,
            vote: &self.vote,
            as_of_height: self.as_of_height,
        })
        .expect("result body is canonicalizable")
    }

    pub fn verify(&self, node_key: &PublicKey) -> bool {
        node_key.verify(&self.signing_bytes(), &self.node_signature)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStatus {
    pub node_id: String,
    pub public_key: PublicKey,
    pub view_height: u64,
    pub last_refresh: u64,
    pub processed: u64,
}

pub struct VerifierNode {
    node_id: String,
    keys: KeyPair,
    store: Arc<dyn BlobStore>,
    view: Mutex<LedgerView>,
    processed: AtomicU64,
    epoch_tolerance: u64,
}

impl VerifierNode {
    pub fn new(
        node_id: impl Into<String>,
        keys: KeyPair,
        store: Arc<dyn BlobStore>,
        view: LedgerView,
    ) -> Self {
        VerifierNode {
            node_id: node_id.into(),
            keys,
            store,
            view: Mutex::new(view),
            processed: AtomicU64::new(0),
            epoch_tolerance: DEFAULT_EPOCH_TOLERANCE,
        }
    }

    pub fn with_epoch_tolerance(mut self, tolerance: u64) -> Self {
        self.epoch_tolerance = tolerance;
        self
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    pub fn public_key(&self) -> PublicKey {
        self.keys.public_key()
    }

    pub fn view(&self) -> LedgerView {
        self.view.lock().expect("view lock").clone()
    }

    /// Apply the polling rule. Returns true if the view advanced in time.
    pub fn poll<L: LedgerRead + ?Sized>(&self, ledger: &L, now: u64) -> bool {
        let mut view = self.view.lock().expect("view lock");
        let next = refresh_view(&view, ledger, now);
        let changed = next.fetched_at != view.fetched_at;
        *view = next;
        changed
    }

    /// A revocation notification arrived.
    pub fn notify<L: LedgerRead + ?Sized>(&self, ledger: &L, now: u64) -> bool {
        let mut view = self.view.lock().expect("view lock");
        let next = notify_view(&view, ledger, now);
        let changed = next.fetched_at != view.fetched_at;
        *view = next;
        changed
    }

    pub fn force_refresh<L: LedgerRead + ?Sized>(&self, ledger: &L, now: u64) {
        let mut view = self.view.lock().expect("view lock");
        *view = view.refreshed(ledger, now);
    }

    /// Run the three-stage check and return a signed vote.
    pub fn handle_verify_task<L: LedgerRead + ?Sized>(
        &self,
        task: &VerifyTask,
        ledger: &L,
        now: u64,
    ) -> VerifyResult {
        let view = {
            let mut view = self.view.lock().expect("view lock");
            if view.is_stale(now) {
                *view = view.refreshed(ledger, now);
            }
            view.clone()
        };
        let vote = self.evaluate(task, &view, now);
        self.processed.fetch_add(1, Ordering::Relaxed);
        self.sign(task.task_id, vote, view.as_of_height)
    }

    fn evaluate(&self, task: &VerifyTask, view: &LedgerView, now: u64) -> Verdict {
        if now > task.deadline {
            return Verdict::Reject(RejectReason::StaleChallenge);
        }
        let verdict = verify_proof(
            &task.proof,
            &task.subject_public_key,
            &task.expected_challenge,
            view.as_of_height,
            self.epoch_tolerance,
        );
        if !verdict.is_accept() {
            return verdict;
        }
        let doc = match self.store.get(&task.proof.metadata_cid) {
            Ok(bytes) => bytes,
            Err(StoreError::NotFound(_)) => return Verdict::Reject(RejectReason::MetadataMissing),
            // fail closed on any store fault
            Err(_) => return Verdict::Reject(RejectReason::MetadataMissing),
        };
        match serde_json::from_slice::<CredentialMetadata>(&doc) {
            Ok(meta)
                if meta.credential_id == task.proof.credential_id
                    && meta.subject_did == task.proof.subject_did => {}
            _ => return Verdict::Reject(RejectReason::MetadataMismatch),
        }
        if is_revoked(view, &task.proof.credential_id).revoked {
            return Verdict::Reject(RejectReason::Revoked);
        }
        Verdict::Accept
    }

    fn sign(&self, task_id: u64, vote: Verdict, as_of_height: u64) -> VerifyResult {
        let mut result = VerifyResult {
            task_id,
            node_id: self.node_id.clone(),
            vote,
            as_of_height,
            node_signature: [0u8; 64],
        };
        result.node_signature = self.keys.sign(&result.signing_bytes());
        result
    }

    pub fn status(&self) -> NodeStatus {
        let view = self.view();
        NodeStatus {
            node_id: self.node_id.clone(),
            public_key: self.public_key(),
            view_height: view.as_of_height,
            last_refresh: view.fetched_at,
            processed: self.processed.load(Ordering::Relaxed),
        }
    }
}
