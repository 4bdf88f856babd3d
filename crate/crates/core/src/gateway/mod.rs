//! Stateless orchestration: challenges, enrolment, fan-out, quorum, tokens.
//!
//! The only transient state is the set of outstanding challenges and the
//! rate-limit buckets. Neither holds identity material: challenges are random
//! bytes and buckets are keyed by a keyed hash under a per-process secret.

pub mod quorum;
pub mod ratelimit;
pub mod token;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical::{self, hex_bytes};
use crate::credential::{
    check_attributes, check_document_privacy, verify_credential, Credential, CredentialId,
    CredentialMetadata,
};
use crate::identity::{Did, KeyPair, PublicKey};
use crate::node::{VerifyResult, VerifyTask};
use crate::proof::AuthProof;
use crate::trust::{BlobStore, Cid, LedgerError, StoreError};

pub use quorum::{aggregate, default_quorum, Decision, Outcome, QuorumConfigError};
pub use ratelimit::{RateLimiter, DEFAULT_CAPACITY, DEFAULT_REFILL_PER_S};
pub use token::{
    ExpiryPolicy, InvalidReason, TokenSigner, TokenValidity, DEFAULT_TOKEN_LIFETIME_S,
};

pub const DEFAULT_NODE_TIMEOUT_MS: u64 = 2_000;
pub const CHALLENGE_TTL_MS: u64 = 30_000;
const REVOKE_DOMAIN: &str = "revoke/v1";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("rate limited")]
    RateLimited,
    #[error("unknown or consumed challenge")]
    UnknownChallenge,
    #[error("invalid credential: {0}")]
    InvalidCredential(String),
    #[error("privacy violation: {0}")]
    PrivacyViolation(String),
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error(transparent)]
    Config(#[from] QuorumConfigError),
    #[error("ledger: {0}")]
    Ledger(#[from] LedgerError),
}

impl GatewayError {
    /// Stable machine-readable code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::RateLimited => "rate_limited",
            GatewayError::UnknownChallenge => "unknown_challenge",
            GatewayError::InvalidCredential(_) => "invalid_credential",
            GatewayError::PrivacyViolation(_) => "privacy_violation",
            GatewayError::Unauthorized(_) => "unauthorized",
            GatewayError::Store(_) => "store_unavailable",
            GatewayError::Config(_) => "config",
            GatewayError::Ledger(_) => "ledger",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub quorum: usize,
    pub node_timeout_ms: u64,
    pub challenge_ttl_ms: u64,
    pub token_lifetime_s: u64,
    pub rate_capacity: u64,
    pub rate_refill_per_s: u64,
    pub expiry_policy: ExpiryPolicy,
}

impl GatewayConfig {
    pub fn for_nodes(n_nodes: usize) -> Self {
        GatewayConfig {
            quorum: default_quorum(n_nodes),
            node_timeout_ms: DEFAULT_NODE_TIMEOUT_MS,
            challenge_ttl_ms: CHALLENGE_TTL_MS,
            token_lifetime_s: DEFAULT_TOKEN_LIFETIME_S,
            rate_capacity: DEFAULT_CAPACITY,
            rate_refill_per_s: DEFAULT_REFILL_PER_S,
            expiry_policy: ExpiryPolicy::Strict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisteredNode {
    pub node_id: String,
    pub public_key: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Challenge {
    #[serde(with = "hex_bytes")]
    pub challenge: [u8; 32],
    pub expires: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollRequest {
    pub credential: Credential,
    pub issuer_public_key: PublicKey,
    pub metadata: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrollResponse {
    pub metadata_cid: Cid,
    pub credential: Credential,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthRequest {
    pub proof: AuthProof,
    pub subject_public_key: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthResponse {
    pub decision: Decision,
    pub token: Option<String>,
}

/// A revocation signed by the credential's issuer or its subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevokeRequest {
    pub credential_id: CredentialId,
    pub metadata_cid: Cid,
    pub reason: u16,
    pub signer_public_key: PublicKey,
    #[serde(with = "hex_bytes")]
    pub signature: [u8; 64],
}

#[derive(Serialize)]
struct RevokeBody<'a> {
    domain: &'static str,
    credential_id: &'a CredentialId,
    metadata_cid: &'a Cid,
    reason: u16,
}

impl RevokeRequest {
    pub fn signing_bytes(credential_id: &CredentialId, metadata_cid: &Cid, reason: u16) -> Vec<u8> {
        canonical::to_canonical(&RevokeBody {
            domain: REVOKE_DOMAIN,
            credential_id,
            metadata_cid,
            reason,
        })
        .expect("revoke body is canonicalizable")
    }

    pub fn sign(
        credential_id: CredentialId,
        metadata_cid: Cid,
        reason: u16,
        keys: &KeyPair,
    ) -> Self {
        let signature = keys.sign(&Self::signing_bytes(&credential_id, &metadata_cid, reason));
        RevokeRequest {
            credential_id,
            metadata_cid,
            reason,
            signer_public_key: keys.public_key(),
            signature,
        }
    }
}

/// An authentication whose challenge has been consumed and whose votes are
/// still outstanding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingAuth {
    pub task: VerifyTask,
    pub subject_did: Did,
    pub started_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeRecord {
    pub challenge: String,
    pub expires: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRecord {
    pub key: String,
    pub tokens: f64,
}

/// Everything the gateway holds in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageDump {
    pub challenges: Vec<ChallengeRecord>,
    pub rate_buckets: Vec<BucketRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStatus {
    pub n_nodes: usize,
    pub quorum: usize,
    pub unilateral: bool,
    pub outstanding_challenges: usize,
}

pub struct Gateway {
    config: GatewayConfig,
    nodes: Vec<RegisteredNode>,
    store: Arc<dyn BlobStore>,
    tokens: TokenSigner,
    challenges: Mutex<HashMap<[u8; 32], u64>>,
    limiter: Mutex<RateLimiter>,
    rng: Mutex<ChaCha20Rng>,
    next_task: AtomicU64,
}

impl Gateway {
    /// `seed` makes challenge and session-id generation reproducible; `None`
    /// seeds from the OS.
    pub fn new(
        config: GatewayConfig,
        mac_key: Vec<u8>,
        nodes: Vec<RegisteredNode>,
        store: Arc<dyn BlobStore>,
        seed: Option<[u8; 32]>,
    ) -> Result<Self, GatewayError> {
        if config.quorum == 0 || config.quorum > nodes.len() {
            return Err(QuorumConfigError {
                quorum: config.quorum,
                n_nodes: nodes.len(),
            }
            .into());
        }
        let seed = seed.unwrap_or_else(|| rand::rng().random());
        let mut rng = ChaCha20Rng::from_seed(seed);
        let limiter_key: [u8; 32] = rng.random();
        Ok(Gateway {
            tokens: TokenSigner::new(mac_key, config.token_lifetime_s, config.expiry_policy),
            limiter: Mutex::new(RateLimiter::new(
                config.rate_capacity,
                config.rate_refill_per_s,
                limiter_key,
            )),
            config,
            nodes,
            store,
            challenges: Mutex::new(HashMap::new()),
            rng: Mutex::new(rng),
            next_task: AtomicU64::new(1),
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[RegisteredNode] {
        &self.nodes
    }

    pub fn token_signer(&self) -> &TokenSigner {
        &self.tokens
    }

    fn admit(&self, subject: &Did, now_ms: u64) -> Result<(), GatewayError> {
        let mut limiter = self.limiter.lock().expect("limiter lock");
        if limiter.admit(&subject.to_string(), now_ms) {
            Ok(())
        } else {
            Err(GatewayError::RateLimited)
        }
    }

    pub fn issue_challenge(&self, subject: &Did, now_ms: u64) -> Result<Challenge, GatewayError> {
        self.admit(subject, now_ms)?;
        let challenge: [u8; 32] = self.rng.lock().expect("rng lock").random();
        let expires = now_ms + self.config.challenge_ttl_ms;
        let mut map = self.challenges.lock().expect("challenge lock");
        map.retain(|_, exp| *exp > now_ms);
        map.insert(challenge, expires);
        Ok(Challenge { challenge, expires })
    }

    /// Remove the challenge if present and unexpired. Exactly one caller can
    /// succeed for a given challenge.
    fn consume_challenge(&self, challenge: &[u8; 32], now_ms: u64) -> bool {
        let mut map = self.challenges.lock().expect("challenge lock");
        matches!(map.remove(challenge), Some(exp) if exp > now_ms)
    }

    pub fn handle_enroll(&self, req: &EnrollRequest) -> Result<EnrollResponse, GatewayError> {
        let cred = &req.credential;
        if !cred.issuer_did.is_controlled_by(&req.issuer_public_key) {
            return Err(GatewayError::InvalidCredential(
                "issuer key does not match issuer DID".into(),
            ));
        }
        if !verify_credential(cred, &req.issuer_public_key) {
            return Err(GatewayError::InvalidCredential(
                "bad issuer signature".into(),
            ));
        }
        check_attributes(&cred.attributes)
            .map_err(|e| GatewayError::PrivacyViolation(e.to_string()))?;
        check_document_privacy(&req.metadata)
            .map_err(|e| GatewayError::PrivacyViolation(e.to_string()))?;
        let meta: CredentialMetadata = serde_json::from_value(req.metadata.clone())
            .map_err(|e| GatewayError::InvalidCredential(format!("metadata: {e}")))?;
        if meta.credential_id != cred.credential_id
            || meta.subject_did != cred.subject_did
            || meta.issuer_did != cred.issuer_did
        {
            return Err(GatewayError::InvalidCredential(
                "metadata does not describe credential".into(),
            ));
        }
        if meta.cid() != cred.metadata_cid {
            return Err(GatewayError::InvalidCredential(
                "metadata CID mismatch".into(),
            ));
        }
        let cid = self.store.put(&meta.to_bytes())?;
        Ok(EnrollResponse {
            metadata_cid: cid,
            credential: cred.clone(),
        })
    }

    /// Consume the challenge and produce the task to fan out.
    pub fn begin_auth(&self, req: &AuthRequest, now_ms: u64) -> Result<PendingAuth, GatewayError> {
        self.admit(&req.proof.subject_did, now_ms)?;
        if !self.consume_challenge(&req.proof.challenge, now_ms) {
            return Err(GatewayError::UnknownChallenge);
        }
        let task = VerifyTask {
            task_id: self.next_task.fetch_add(1, Ordering::Relaxed),
            proof: req.proof.clone(),
            subject_public_key: req.subject_public_key,
            expected_challenge: req.proof.challenge,
            deadline: now_ms + self.config.node_timeout_ms,
        };
        Ok(PendingAuth {
            task,
            subject_did: req.proof.subject_did.clone(),
            started_at: now_ms,
        })
    }

    /// Aggregate whatever votes arrived before the per-node timeout. Votes
    /// for another task, from unregistered nodes, or with bad signatures are
    /// discarded and so count as missing.
    pub fn complete_auth(
        &self,
        pending: &PendingAuth,
        votes: Vec<VerifyResult>,
        now_ms: u64,
    ) -> AuthResponse {
        let valid: Vec<VerifyResult> = votes
            .into_iter()
            .filter(|v| v.task_id == pending.task.task_id)
            .filter(|v| {
                self.nodes
                    .iter()
                    .any(|n| n.node_id == v.node_id && v.verify(&n.public_key))
            })
            .collect();
        let decision = aggregate(valid, self.config.quorum, self.nodes.len())
            .expect("quorum validated at construction");
        let token = decision.accepted().then(|| {
            let sid: [u8; 16] = self.rng.lock().expect("rng lock").random();
            self.tokens.mint(
                &pending.subject_did.to_string(),
                &hex::encode(sid),
                now_ms / 1000,
            )
        });
        AuthResponse { decision, token }
    }

    /// Full authentication with a caller-supplied fan-out that returns the
    /// votes received within the deadline.
    pub fn handle_auth<F>(
        &self,
        req: &AuthRequest,
        now_ms: u64,
        fan_out: F,
    ) -> Result<AuthResponse, GatewayError>
    where
        F: FnOnce(&VerifyTask, &[RegisteredNode]) -> Vec<VerifyResult>,
    {
        let pending = self.begin_auth(req, now_ms)?;
        let votes = fan_out(&pending.task, &self.nodes);
        Ok(self.complete_auth(&pending, votes, now_ms))
    }

    pub fn validate_token(&self, token: &str, now_ms: u64) -> TokenValidity {
        self.tokens.validate_token(token, now_ms / 1000)
    }

    /// Check that a revocation is signed by the credential's issuer or
    /// subject, as named in its stored metadata document.
    pub fn authorize_revoke(&self, req: &RevokeRequest) -> Result<(), GatewayError> {
        let doc = self.store.get(&req.metadata_cid)?;
        let meta: CredentialMetadata = serde_json::from_slice(&doc)
            .map_err(|e| GatewayError::InvalidCredential(format!("metadata: {e}")))?;
        if meta.credential_id != req.credential_id {
            return Err(GatewayError::InvalidCredential(
                "metadata does not describe credential".into(),
            ));
        }
        let authority = meta.issuer_did.is_controlled_by(&req.signer_public_key)
            || meta.subject_did.is_controlled_by(&req.signer_public_key);
        if !authority {
            return Err(GatewayError::Unauthorized(
                "signer is neither issuer nor subject".into(),
            ));
        }
        let body = RevokeRequest::signing_bytes(&req.credential_id, &req.metadata_cid, req.reason);
        if !req.signer_public_key.verify(&body, &req.signature) {
            return Err(GatewayError::Unauthorized(
                "bad revocation signature".into(),
            ));
        }
        Ok(())
    }

    /// Drop expired challenges and refilled buckets.
    pub fn prune(&self, now_ms: u64) {
        self.challenges
            .lock()
            .expect("challenge lock")
            .retain(|_, exp| *exp > now_ms);
        self.limiter.lock().expect("limiter lock").prune(now_ms);
    }

    pub fn storage_dump(&self, now_ms: u64) -> StorageDump {
        self.prune(now_ms);
        let mut challenges: Vec<ChallengeRecord> = self
            .challenges
            .lock()
            .expect("challenge lock")
            .iter()
            .map(|(c, exp)| ChallengeRecord {
                challenge: hex::encode(c),
                expires: *exp,
            })
            .collect();
        challenges.sort_by(|a, b| a.challenge.cmp(&b.challenge));
        let rate_buckets = self
            .limiter
            .lock()
            .expect("limiter lock")
            .snapshot()
            .into_iter()
            .map(|(k, b)| BucketRecord {
                key: hex::encode(k),
                tokens: b.tokens(),
            })
            .collect();
        StorageDump {
            challenges,
            rate_buckets,
        }
    }

    pub fn status(&self) -> GatewayStatus {
        GatewayStatus {
            n_nodes: self.nodes.len(),
            quorum: self.config.quorum,
            unilateral: self.config.quorum == 1,
            outstanding_challenges: self.challenges.lock().expect("challenge lock").len(),
        }
    }
}

/// A fresh 32-byte MAC key from the OS RNG.
pub fn random_mac_key() -> Vec<u8> {
    let mut key = vec![0u8; 32];
    rand::rng().fill_bytes(&mut key);
    key
}

#[cfg(test)]
mod tests;
