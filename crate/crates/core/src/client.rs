//! Client-side state and request builders.
//!
//! The wallet is the user's own keystore: it holds the signing seed, the
//! protected enrolment template and its key, and the issued credential. None
//! of it leaves the device except the credential and proofs.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biometric::{
    enrolment_reference, make_profile, match_embeddings, protect_template, recover_template,
    sample_embedding, BiometricError, Embedding, IdentityProfile, MatchResult, ProtectedTemplate,
};
use crate::canonical::hex_bytes;
use crate::credential::{
    issue_credential_with_id, Credential, CredentialError, CredentialId, CredentialMetadata,
};
use crate::gateway::{AuthRequest, EnrollRequest};
use crate::identity::{generate_identity, Did, KeyPair, PublicKey};
use crate::proof::{build_proof, DeviceAttestation, ProofError};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Biometric(#[from] BiometricError),
    #[error(transparent)]
    Credential(#[from] CredentialError),
    #[error(transparent)]
    Proof(#[from] ProofError),
    #[error("wallet has no credential; enroll first")]
    NotEnrolled,
    #[error("wallet file: {0}")]
    Io(#[from] io::Error),
    #[error("wallet format: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wallet {
    #[serde(with = "hex_bytes")]
    seed: [u8; 32],
    pub did: Did,
    pub public_key: PublicKey,
    /// Seed of the simulated face this wallet's owner presents.
    #[serde(with = "hex_bytes")]
    pub profile_seed: [u8; 32],
    #[serde(with = "hex_bytes")]
    template_key: [u8; 32],
    pub template: ProtectedTemplate,
    pub credential: Option<Credential>,
}

impl Wallet {
    pub fn create<R: Rng + ?Sized>(
        seed: [u8; 32],
        profile_seed: [u8; 32],
        template_key: [u8; 32],
        rng: &mut R,
    ) -> Result<Self, ClientError> {
        let (did, keys) = generate_identity(&seed);
        let reference = enrolment_reference(&make_profile(&profile_seed));
        let template = protect_template(&reference, &template_key, "device-key-1", rng)?;
        Ok(Wallet {
            seed,
            did,
            public_key: keys.public_key(),
            profile_seed,
            template_key,
            template,
            credential: None,
        })
    }

    pub fn keys(&self) -> KeyPair {
        KeyPair::from_seed(&self.seed)
    }

    pub fn profile(&self) -> IdentityProfile {
        make_profile(&self.profile_seed)
    }

    pub fn reference(&self) -> Result<Embedding, ClientError> {
        Ok(recover_template(&self.template, &self.template_key)?)
    }

    pub fn credential(&self) -> Result<&Credential, ClientError> {
        self.credential.as_ref().ok_or(ClientError::NotEnrolled)
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClientError> {
        write_json(path, self)
    }
}

/// An issuer's signing key on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuerKeys {
    #[serde(with = "hex_bytes")]
    seed: [u8; 32],
    pub did: Did,
    pub public_key: PublicKey,
}

impl IssuerKeys {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        let (did, keys) = generate_identity(&seed);
        IssuerKeys {
            seed,
            did,
            public_key: keys.public_key(),
        }
    }

    pub fn keys(&self) -> KeyPair {
        KeyPair::from_seed(&self.seed)
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClientError> {
        write_json(path, self)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ClientError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

/// Issue a credential and assemble the enrolment request carrying its
/// metadata document.
pub fn build_enrollment(
    subject: &Did,
    issuer_keys: &KeyPair,
    issuer_did: &Did,
    attributes: BTreeMap<String, String>,
    claims: BTreeMap<String, String>,
    now_ms: u64,
) -> Result<EnrollRequest, ClientError> {
    let credential_id = CredentialId::derive(issuer_did, subject, now_ms);
    build_enrollment_with_id(
        credential_id,
        subject,
        issuer_keys,
        issuer_did,
        attributes,
        claims,
        now_ms,
    )
}

/// As [`build_enrollment`] with a caller-chosen credential id.
pub fn build_enrollment_with_id(
    credential_id: CredentialId,
    subject: &Did,
    issuer_keys: &KeyPair,
    issuer_did: &Did,
    attributes: BTreeMap<String, String>,
    claims: BTreeMap<String, String>,
    now_ms: u64,
) -> Result<EnrollRequest, ClientError> {
    let meta = CredentialMetadata {
        credential_id,
        subject_did: subject.clone(),
        issuer_did: issuer_did.clone(),
        issued_at: now_ms,
        claims,
    };
    let credential = issue_credential_with_id(
        credential_id,
        subject,
        issuer_keys,
        issuer_did,
        attributes,
        meta.cid(),
        now_ms,
    )?;
    Ok(EnrollRequest {
        credential,
        issuer_public_key: issuer_keys.public_key(),
        metadata: serde_json::to_value(&meta)?,
    })
}

/// Capture a probe of the wallet owner's face (or of `presenter`, for
/// impostor trials).
pub fn capture_probe(
    presenter: &IdentityProfile,
    noise_sigma: f64,
    sample_seed: &[u8; 32],
) -> Result<Embedding, ClientError> {
    Ok(sample_embedding(presenter, noise_sigma, sample_seed)?)
}

/// Match locally and, if accepted and the device passes, build the proof.
#[allow(clippy::too_many_arguments)]
pub fn build_auth_request<R: Rng + ?Sized>(
    wallet: &Wallet,
    probe: &Embedding,
    threshold: f64,
    attestation: &DeviceAttestation,
    challenge: [u8; 32],
    ledger_epoch: u64,
    rng: &mut R,
) -> Result<(AuthRequest, MatchResult), ClientError> {
    let cred = wallet.credential()?;
    let result = match_embeddings(&wallet.reference()?, probe, threshold)?;
    let (proof, _opening) = build_proof(
        cred,
        &wallet.keys(),
        challenge,
        &result,
        attestation,
        ledger_epoch,
        rng,
    )?;
    Ok((
        AuthRequest {
            proof,
            subject_public_key: wallet.public_key,
        },
        result,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biometric::DEFAULT_NOISE_SIGMA;
    use crate::identity::seed_from_label;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn wallet_round_trip_and_reference() {
        let mut rng = ChaCha20Rng::from_seed([5; 32]);
        let w = Wallet::create(seed_from_label("alice"), [1; 32], [2; 32], &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        w.save(&path).unwrap();
        let back = Wallet::load(&path).unwrap();
        assert_eq!(back, w);
        assert_eq!(
            back.reference().unwrap().to_wire(),
            enrolment_reference(&make_profile(&[1; 32])).to_wire()
        );
    }

    #[test]
    fn enrollment_metadata_addresses_credential() {
        let (subject, _) = generate_identity(&seed_from_label("s"));
        let (issuer, ik) = generate_identity(&seed_from_label("i"));
        let req =
            build_enrollment(&subject, &ik, &issuer, BTreeMap::new(), BTreeMap::new(), 7).unwrap();
        let meta: CredentialMetadata = serde_json::from_value(req.metadata).unwrap();
        assert_eq!(meta.cid(), req.credential.metadata_cid);
        assert_eq!(meta.credential_id, req.credential.credential_id);
    }

    #[test]
    fn auth_requires_enrolment_and_match() {
        let mut rng = ChaCha20Rng::from_seed([6; 32]);
        let mut w = Wallet::create(seed_from_label("bob"), [3; 32], [4; 32], &mut rng).unwrap();
        let probe = capture_probe(&w.profile(), DEFAULT_NOISE_SIGMA, &[9; 32]).unwrap();
        let att = DeviceAttestation::trusted();
        assert!(matches!(
            build_auth_request(&w, &probe, 0.8, &att, [0; 32], 0, &mut rng),
            Err(ClientError::NotEnrolled)
        ));
        let (issuer, ik) = generate_identity(&seed_from_label("iss"));
        w.credential = Some(
            build_enrollment(&w.did, &ik, &issuer, BTreeMap::new(), BTreeMap::new(), 1)
                .unwrap()
                .credential,
        );
        let (req, m) = build_auth_request(&w, &probe, 0.8, &att, [7; 32], 0, &mut rng).unwrap();
        assert!(m.accepted);
        assert_eq!(req.proof.challenge, [7; 32]);
        let impostor =
            capture_probe(&make_profile(&[99; 32]), DEFAULT_NOISE_SIGMA, &[9; 32]).unwrap();
        assert!(matches!(
            build_auth_request(&w, &impostor, 0.8, &att, [7; 32], 0, &mut rng),
            Err(ClientError::Proof(ProofError::MatchRejected))
        ));
    }
}
