//! Challenge-bound authentication proofs and the device-integrity gate.
//!
//! A proof is a signed transcript binding credential possession, a salted
//! commitment to the local match outcome, the digest of the device
//! attestation, and the ledger height the prover observed. The verifier
//! never receives the embedding, the salt, or the raw attestation.
//!
//! This is a signed-transcript binding, not a zero-knowledge proof system.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::biometric::MatchResult;
use crate::canonical::{self, hex_bytes};
use crate::credential::{Credential, CredentialId};
use crate::identity::{Did, KeyPair, PublicKey};
use crate::trust::Cid;

const TRANSCRIPT_DOMAIN: &str = "auth-proof/v1";

pub const DEFAULT_EPOCH_TOLERANCE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrityCheck {
    Rooted,
    Keystore,
    Tee,
    Liveness,
}

impl fmt::Display for IntegrityCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntegrityCheck::Rooted => "rooted",
            IntegrityCheck::Keystore => "keystore",
            IntegrityCheck::Tee => "tee",
            IntegrityCheck::Liveness => "liveness",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceAttestation {
    pub rooted: bool,
    pub keystore_ok: bool,
    pub tee_ok: bool,
    pub liveness_ok: bool,
}

impl DeviceAttestation {
    pub fn trusted() -> Self {
        DeviceAttestation {
            rooted: false,
            keystore_ok: true,
            tee_ok: true,
            liveness_ok: true,
        }
    }

    pub fn passes(&self) -> bool {
        !self.rooted && self.keystore_ok && self.tee_ok && self.liveness_ok
    }

    pub fn digest(&self) -> [u8; 32] {
        canonical::canonical_digest(self).expect("attestation is canonicalizable")
    }
}

/// Evidence that the device gate passed. Only `gate_device` creates one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DevicePass {
    attestation_digest: [u8; 32],
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("authentication blocked by failed integrity checks: {failed:?}")]
pub struct AuthBlocked {
    pub failed: Vec<IntegrityCheck>,
}

pub fn gate_device(att: &DeviceAttestation) -> Result<DevicePass, AuthBlocked> {
    let mut failed = Vec::new();
    if att.rooted {
        failed.push(IntegrityCheck::Rooted);
    }
    if !att.keystore_ok {
        failed.push(IntegrityCheck::Keystore);
    }
    if !att.tee_ok {
        failed.push(IntegrityCheck::Tee);
    }
    if !att.liveness_ok {
        failed.push(IntegrityCheck::Liveness);
    }
    if failed.is_empty() {
        Ok(DevicePass {
            attestation_digest: att.digest(),
        })
    } else {
        Err(AuthBlocked { failed })
    }
}

/// Salted commitment to the local match outcome. The salt stays on the device.
#[derive(Clone, PartialEq, Eq)]
pub struct MatchCommitment {
    pub commitment: [u8; 32],
    salt: [u8; 16],
}

impl MatchCommitment {
    pub fn commit<R: Rng + ?Sized>(accepted: bool, rng: &mut R) -> Self {
        let mut salt = [0u8; 16];
        rng.fill_bytes(&mut salt);
        Self::with_salt(accepted, salt)
    }

    pub fn with_salt(accepted: bool, salt: [u8; 16]) -> Self {
        let mut h = Sha256::new();
        h.update([accepted as u8]);
        h.update(salt);
        MatchCommitment {
            commitment: h.finalize().into(),
            salt,
        }
    }

    pub fn salt(&self) -> &[u8; 16] {
        &self.salt
    }

    /// Check an opening (outcome + salt) against this commitment.
    pub fn opens_to(&self, accepted: bool, salt: &[u8; 16]) -> bool {
        MatchCommitment::with_salt(accepted, *salt).commitment == self.commitment
    }
}

impl fmt::Debug for MatchCommitment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatchCommitment")
            .field("commitment", &hex::encode(self.commitment))
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuthProof {
    pub credential_id: CredentialId,
    pub subject_did: Did,
    pub metadata_cid: Cid,
    #[serde(with = "hex_bytes")]
    pub challenge: [u8; 32],
    #[serde(with = "hex_bytes")]
    pub match_commitment: [u8; 32],
    #[serde(with = "hex_bytes")]
    pub attestation_digest: [u8; 32],
    pub ledger_epoch: u64,
    #[serde(with = "hex_bytes")]
    pub signature: [u8; 64],
}

#[derive(Serialize)]
struct Transcript<'a> {
    domain: &'static str,
    credential_id: &'a CredentialId,
    subject_did: &'a Did,
    metadata_cid: &'a Cid,
    #[serde(with = "hex_bytes")]
    challenge: [u8; 32],
    #[serde(with = "hex_bytes")]
    match_commitment: [u8; 32],
    #[serde(with = "hex_bytes")]
    attestation_digest: [u8; 32],
    ledger_epoch: u64,
}

impl AuthProof {
    pub fn transcript(&self) -> Vec<u8> {
        canonical::to_canonical(&Transcript {
            domain: TRANSCRIPT_DOMAIN,
            credential_id: &self.credential_id,
            subject_did: &self.subject_did,
            metadata_cid: &self.metadata_cid,
            challenge: self.challenge,
            match_commitment: self.match_commitment,
            attestation_digest: self.attestation_digest,
            ledger_epoch: self.ledger_epoch,
        })
        .expect("transcript is canonicalizable")
    }

    pub fn to_wire(&self) -> Vec<u8> {
        canonical::to_canonical(self).expect("proof is canonicalizable")
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, String> {
        let p: AuthProof = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        if p.to_wire() != bytes {
            return Err("non-canonical encoding".into());
        }
        Ok(p)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProofError {
    #[error("local biometric match was rejected")]
    MatchRejected,
    #[error("device untrusted: {0}")]
    DeviceUntrusted(AuthBlocked),
}

/// Build a proof. Fails unless the device gate passes and the local match
/// was accepted. Returns the proof and the locally retained commitment opening.
pub fn build_proof<R: Rng + ?Sized>(
    cred: &Credential,
    keys: &KeyPair,
    challenge: [u8; 32],
    local_match: &MatchResult,
    att: &DeviceAttestation,
    ledger_epoch: u64,
    rng: &mut R,
) -> Result<(AuthProof, MatchCommitment), ProofError> {
    let pass = gate_device(att).map_err(ProofError::DeviceUntrusted)?;
    if !local_match.accepted {
        return Err(ProofError::MatchRejected);
    }
    let commitment = MatchCommitment::commit(true, rng);
    let mut proof = AuthProof {
        credential_id: cred.credential_id,
        subject_did: cred.subject_did.clone(),
        metadata_cid: cred.metadata_cid,
        challenge,
        match_commitment: commitment.commitment,
        attestation_digest: pass.attestation_digest,
        ledger_epoch,
        signature: [0u8; 64],
    };
    proof.signature = keys.sign(&proof.transcript());
    Ok((proof, commitment))
}

/// Why a verifier refused a proof.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    BadSignature,
    StaleChallenge,
    StaleEpoch,
    MetadataMissing,
    MetadataMismatch,
    Revoked,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::BadSignature => "bad_signature",
            RejectReason::StaleChallenge => "stale_challenge",
            RejectReason::StaleEpoch => "stale_epoch",
            RejectReason::MetadataMissing => "metadata_missing",
            RejectReason::MetadataMismatch => "metadata_mismatch",
            RejectReason::Revoked => "revoked",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "vote", content = "reason", rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

pub fn verify_proof(
    proof: &AuthProof,
    subject_public_key: &PublicKey,
    expected_challenge: &[u8; 32],
    current_epoch: u64,
    epoch_tolerance: u64,
) -> Verdict {
    if !proof.subject_did.is_controlled_by(subject_public_key)
        || !subject_public_key.verify(&proof.transcript(), &proof.signature)
    {
        return Verdict::Reject(RejectReason::BadSignature);
    }
    if proof.challenge != *expected_challenge {
        return Verdict::Reject(RejectReason::StaleChallenge);
    }
    if current_epoch.saturating_sub(proof.ledger_epoch) > epoch_tolerance {
        return Verdict::Reject(RejectReason::StaleEpoch);
    }
    Verdict::Accept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biometric::{make_profile, match_embeddings, sample_embedding};
    use crate::credential::issue_credential;
    use crate::identity::generate_identity;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::{BTreeMap, HashSet};

    struct Fixture {
        cred: Credential,
        keys: KeyPair,
        accepted: MatchResult,
    }

    fn fixture() -> Fixture {
        let (subject, keys) = generate_identity(&[1u8; 32]);
        let (issuer, issuer_keys) = generate_identity(&[2u8; 32]);
        let cred = issue_credential(
            &subject,
            &issuer_keys,
            &issuer,
            BTreeMap::new(),
            Cid::of(b"m"),
            5,
        )
        .unwrap();
        let profile = make_profile(&[3u8; 32]);
        let probe = sample_embedding(&profile, 0.05, &[4u8; 32]).unwrap();
        let accepted = match_embeddings(&profile.mean, &probe, 0.8).unwrap();
        assert!(accepted.accepted);
        Fixture {
            cred,
            keys,
            accepted,
        }
    }

    #[test]
    fn gate_reports_failed_checks() {
        assert!(gate_device(&DeviceAttestation::trusted()).is_ok());
        let rooted = DeviceAttestation {
            rooted: true,
            ..DeviceAttestation::trusted()
        };
        assert_eq!(
            gate_device(&rooted).unwrap_err().failed,
            vec![IntegrityCheck::Rooted]
        );
        let no_live = DeviceAttestation {
            liveness_ok: false,
            ..DeviceAttestation::trusted()
        };
        assert_eq!(
            gate_device(&no_live).unwrap_err().failed,
            vec![IntegrityCheck::Liveness]
        );
        let all_bad = DeviceAttestation {
            rooted: true,
            keystore_ok: false,
            tee_ok: false,
            liveness_ok: false,
        };
        assert_eq!(gate_device(&all_bad).unwrap_err().failed.len(), 4);
    }

    #[test]
    fn honest_proof_verifies() {
        let f = fixture();
        let mut rng = ChaCha20Rng::from_seed([0; 32]);
        let challenge = [9u8; 32];
        let (p, c) = build_proof(
            &f.cred,
            &f.keys,
            challenge,
            &f.accepted,
            &DeviceAttestation::trusted(),
            7,
            &mut rng,
        )
        .unwrap();
        assert!(c.opens_to(true, c.salt()));
        assert!(!c.opens_to(false, c.salt()));
        assert_eq!(
            verify_proof(&p, &f.keys.public_key(), &challenge, 7, 2),
            Verdict::Accept
        );
    }

    #[test]
    fn rejected_match_and_untrusted_device() {
        let f = fixture();
        let mut rng = ChaCha20Rng::from_seed([0; 32]);
        let rejected = MatchResult {
            accepted: false,
            ..f.accepted
        };
        assert_eq!(
            build_proof(
                &f.cred,
                &f.keys,
                [0; 32],
                &rejected,
                &DeviceAttestation::trusted(),
                0,
                &mut rng
            )
            .unwrap_err(),
            ProofError::MatchRejected
        );
        let rooted = DeviceAttestation {
            rooted: true,
            ..DeviceAttestation::trusted()
        };
        assert!(matches!(
            build_proof(&f.cred, &f.keys, [0; 32], &f.accepted, &rooted, 0, &mut rng),
            Err(ProofError::DeviceUntrusted(_))
        ));
    }

    #[test]
    fn fresh_salts_distinct_commitments() {
        let f = fixture();
        let mut rng = ChaCha20Rng::from_seed([1; 32]);
        let mut seen = HashSet::new();
        for _ in 0..100 {
            let (p, _) = build_proof(
                &f.cred,
                &f.keys,
                [5; 32],
                &f.accepted,
                &DeviceAttestation::trusted(),
                1,
                &mut rng,
            )
            .unwrap();
            assert!(verify_proof(&p, &f.keys.public_key(), &[5; 32], 1, 2).is_accept());
            assert!(seen.insert(p.match_commitment));
        }
    }

    #[test]
    fn stale_challenge_and_epoch_boundary() {
        let f = fixture();
        let mut rng = ChaCha20Rng::from_seed([2; 32]);
        let (p, _) = build_proof(
            &f.cred,
            &f.keys,
            [1; 32],
            &f.accepted,
            &DeviceAttestation::trusted(),
            10,
            &mut rng,
        )
        .unwrap();
        let pk = f.keys.public_key();
        assert_eq!(
            verify_proof(&p, &pk, &[2; 32], 10, 2),
            Verdict::Reject(RejectReason::StaleChallenge)
        );
        assert_eq!(verify_proof(&p, &pk, &[1; 32], 12, 2), Verdict::Accept);
        assert_eq!(
            verify_proof(&p, &pk, &[1; 32], 13, 2),
            Verdict::Reject(RejectReason::StaleEpoch)
        );
        // a prover ahead of the verifier's view is not stale
        assert_eq!(verify_proof(&p, &pk, &[1; 32], 3, 2), Verdict::Accept);
    }

    #[test]
    fn field_mutations_invalidate() {
        let f = fixture();
        let mut rng = ChaCha20Rng::from_seed([3; 32]);
        let (p, _) = build_proof(
            &f.cred,
            &f.keys,
            [1; 32],
            &f.accepted,
            &DeviceAttestation::trusted(),
            4,
            &mut rng,
        )
        .unwrap();
        let pk = f.keys.public_key();
        let mut variants = Vec::new();
        let mut q = p.clone();
        q.credential_id = CredentialId::from_bytes([7; 16]);
        variants.push(q);
        let mut q = p.clone();
        q.metadata_cid = Cid::of(b"x");
        variants.push(q);
        let mut q = p.clone();
        q.match_commitment[0] ^= 1;
        variants.push(q);
        let mut q = p.clone();
        q.attestation_digest[31] ^= 1;
        variants.push(q);
        let mut q = p.clone();
        q.ledger_epoch += 1;
        variants.push(q);
        let mut q = p.clone();
        q.signature[10] ^= 4;
        variants.push(q);
        for q in variants {
            assert_eq!(
                verify_proof(&q, &pk, &[1; 32], 4, 2),
                Verdict::Reject(RejectReason::BadSignature)
            );
        }
    }

    #[test]
    fn wire_is_strict_and_round_trips() {
        let f = fixture();
        let mut rng = ChaCha20Rng::from_seed([4; 32]);
        let (p, _) = build_proof(
            &f.cred,
            &f.keys,
            [1; 32],
            &f.accepted,
            &DeviceAttestation::trusted(),
            4,
            &mut rng,
        )
        .unwrap();
        assert_eq!(AuthProof::from_wire(&p.to_wire()).unwrap(), p);
        assert!(AuthProof::from_wire(&serde_json::to_vec_pretty(&p).unwrap()).is_err());
    }

    #[test]
    fn verdict_json() {
        assert_eq!(
            serde_json::to_string(&Verdict::Accept).unwrap(),
            r#"{"vote":"accept"}"#
        );
        assert_eq!(
            serde_json::to_string(&Verdict::Reject(RejectReason::StaleEpoch)).unwrap(),
            r#"{"vote":"reject","reason":"stale_epoch"}"#
        );
    }
}
