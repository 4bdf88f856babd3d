//! Issuer-signed verifiable credentials.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical::{self, hex_bytes, CanonicalError};
use crate::identity::{Did, KeyPair, PublicKey, SIGNATURE_SCHEME};
use crate::trust::Cid;

/// Attribute / metadata key names that mark biometric material.
const BIOMETRIC_KEYS: &[&str] = &["embedding", "template"];

/// Byte length of an embedding's wire encoding; hex strings of this size in
/// metadata are treated as smuggled templates.
const EMBEDDING_WIRE_LEN: usize = crate::biometric::WIRE_LEN;

static ISSUE_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CredentialError {
    #[error("privacy violation: {0}")]
    PrivacyViolation(String),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
    #[error("malformed credential: {0}")]
    Malformed(String),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CredentialId([u8; 16]);

impl CredentialId {
    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        CredentialId(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }

    /// Derive a fresh id from issuer, subject, issue time and a process-wide counter.
    pub fn derive(issuer: &Did, subject: &Did, now_ms: u64) -> Self {
        let counter = ISSUE_COUNTER.fetch_add(1, Ordering::Relaxed);
        Self::derive_with_counter(issuer, subject, now_ms, counter)
    }

    pub fn derive_with_counter(issuer: &Did, subject: &Did, now_ms: u64, counter: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"credential-id\0");
        h.update(issuer.to_string().as_bytes());
        h.update([0]);
        h.update(subject.to_string().as_bytes());
        h.update(now_ms.to_be_bytes());
        h.update(counter.to_be_bytes());
        let digest = h.finalize();
        let mut id = [0u8; 16];
        id.copy_from_slice(&digest[..16]);
        CredentialId(id)
    }
}

impl fmt::Display for CredentialId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for CredentialId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CredentialId({self})")
    }
}

impl FromStr for CredentialId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        canonical::decode_hex_array(s).map(CredentialId)
    }
}

impl Serialize for CredentialId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        hex_bytes::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for CredentialId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        hex_bytes::deserialize(d).map(CredentialId)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Credential {
    pub scheme: String,
    pub credential_id: CredentialId,
    pub subject_did: Did,
    pub issuer_did: Did,
    pub attributes: BTreeMap<String, String>,
    pub metadata_cid: Cid,
    pub issued_at: u64,
    #[serde(with = "hex_bytes")]
    pub signature: [u8; 64],
}

#[derive(Serialize)]
struct SignedFields<'a> {
    scheme: &'a str,
    credential_id: &'a CredentialId,
    subject_did: &'a Did,
    issuer_did: &'a Did,
    attributes: &'a BTreeMap<String, String>,
    metadata_cid: &'a Cid,
    issued_at: u64,
}

impl Credential {
    /// Canonical bytes covered by the issuer signature.
    pub fn signing_bytes(&self) -> Result<Vec<u8>, CanonicalError> {
        canonical::to_canonical(&SignedFields {
            scheme: &self.scheme,
            credential_id: &self.credential_id,
            subject_did: &self.subject_did,
            issuer_did: &self.issuer_did,
            attributes: &self.attributes,
            metadata_cid: &self.metadata_cid,
            issued_at: self.issued_at,
        })
    }

    /// Wire form: the canonical encoding including the hex signature.
    pub fn to_wire(&self) -> Vec<u8> {
        canonical::to_canonical(self).expect("credential fields are canonicalizable")
    }

    /// Parse a wire-form credential. Input must already be canonical.
    pub fn from_wire(bytes: &[u8]) -> Result<Self, CredentialError> {
        let cred: Credential =
            serde_json::from_slice(bytes).map_err(|e| CredentialError::Malformed(e.to_string()))?;
        if cred.to_wire() != bytes {
            return Err(CredentialError::Malformed("non-canonical encoding".into()));
        }
        Ok(cred)
    }
}

/// The document stored by CID for each credential.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialMetadata {
    pub credential_id: CredentialId,
    pub subject_did: Did,
    pub issuer_did: Did,
    pub issued_at: u64,
    #[serde(default)]
    pub claims: BTreeMap<String, String>,
}

impl CredentialMetadata {
    pub fn to_bytes(&self) -> Vec<u8> {
        canonical::to_canonical(self).expect("metadata is canonicalizable")
    }

    pub fn cid(&self) -> Cid {
        Cid::of(&self.to_bytes())
    }
}

/// Reject attribute maps that name biometric material.
pub fn check_attributes(attributes: &BTreeMap<String, String>) -> Result<(), CredentialError> {
    for key in attributes.keys() {
        if is_biometric_key(key) {
            return Err(CredentialError::PrivacyViolation(format!(
                "attribute key {key:?}"
            )));
        }
    }
    Ok(())
}

/// Structural scan of an arbitrary document: no biometric-named keys at any
/// depth and no hex string the size of an embedding wire encoding.
pub fn check_document_privacy(doc: &Value) -> Result<(), CredentialError> {
    match doc {
        Value::Object(map) => {
            for (k, v) in map {
                if is_biometric_key(k) {
                    return Err(CredentialError::PrivacyViolation(format!(
                        "document key {k:?}"
                    )));
                }
                check_document_privacy(v)?;
            }
            Ok(())
        }
        Value::Array(items) => items.iter().try_for_each(check_document_privacy),
        Value::String(s) if s.len() == EMBEDDING_WIRE_LEN * 2 && hex::decode(s).is_ok() => Err(
            CredentialError::PrivacyViolation("embedding-sized byte string in document".into()),
        ),
        _ => Ok(()),
    }
}

fn is_biometric_key(key: &str) -> bool {
    let key = key.to_ascii_lowercase();
    BIOMETRIC_KEYS.iter().any(|b| key.contains(b))
}

/// Issue a credential, deriving a fresh credential id.
pub fn issue_credential(
    subject: &Did,
    issuer_keys: &KeyPair,
    issuer_did: &Did,
    attributes: BTreeMap<String, String>,
    metadata_cid: Cid,
    now_ms: u64,
) -> Result<Credential, CredentialError> {
    let id = CredentialId::derive(issuer_did, subject, now_ms);
    issue_credential_with_id(
        id,
        subject,
        issuer_keys,
        issuer_did,
        attributes,
        metadata_cid,
        now_ms,
    )
}

/// Issue a credential under a pre-allocated id (used when the metadata
/// document, which embeds the id, must be addressed before signing).
pub fn issue_credential_with_id(
    credential_id: CredentialId,
    subject: &Did,
    issuer_keys: &KeyPair,
    issuer_did: &Did,
    attributes: BTreeMap<String, String>,
    metadata_cid: Cid,
    now_ms: u64,
) -> Result<Credential, CredentialError> {
    check_attributes(&attributes)?;
    let mut cred = Credential {
        scheme: SIGNATURE_SCHEME.to_owned(),
        credential_id,
        subject_did: subject.clone(),
        issuer_did: issuer_did.clone(),
        attributes,
        metadata_cid,
        issued_at: now_ms,
        signature: [0u8; 64],
    };
    cred.signature = issuer_keys.sign(&cred.signing_bytes()?);
    Ok(cred)
}

pub fn verify_credential(cred: &Credential, issuer_public_key: &PublicKey) -> bool {
    if cred.scheme != SIGNATURE_SCHEME {
        return false;
    }
    match cred.signing_bytes() {
        Ok(bytes) => issuer_public_key.verify(&bytes, &cred.signature),
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::generate_identity;
    use serde_json::json;

    fn fixture() -> (Credential, KeyPair) {
        let (subject, _) = generate_identity(&[1u8; 32]);
        let (issuer, issuer_keys) = generate_identity(&[2u8; 32]);
        let attrs = BTreeMap::from([("name".to_string(), "Ada".to_string())]);
        let cred = issue_credential(
            &subject,
            &issuer_keys,
            &issuer,
            attrs,
            Cid::of(b"meta"),
            1_700_000_000_000,
        )
        .unwrap();
        (cred, issuer_keys)
    }

    #[test]
    fn issued_credential_verifies() {
        let (cred, keys) = fixture();
        assert!(verify_credential(&cred, &keys.public_key()));
        let (_, other) = generate_identity(&[9u8; 32]);
        assert!(!verify_credential(&cred, &other.public_key()));
    }

    #[test]
    fn privacy_violation() {
        let (subject, _) = generate_identity(&[1u8; 32]);
        let (issuer, keys) = generate_identity(&[2u8; 32]);
        for key in ["embedding", "Template"] {
            let attrs = BTreeMap::from([(key.to_string(), "x".to_string())]);
            let err =
                issue_credential(&subject, &keys, &issuer, attrs, Cid::of(b"m"), 0).unwrap_err();
            assert!(matches!(err, CredentialError::PrivacyViolation(_)));
        }
    }

    #[test]
    fn ids_unique_per_call() {
        let (a, _) = fixture();
        let (b, _) = fixture();
        assert_ne!(a.credential_id, b.credential_id);
    }

    #[test]
    fn single_field_mutations_fail() {
        let (cred, keys) = fixture();
        let pk = keys.public_key();
        let (other_subject, _) = generate_identity(&[5u8; 32]);
        type Mutation<'a> = Box<dyn Fn(&mut Credential) + 'a>;
        let mutations: Vec<Mutation> = vec![
            Box::new(|c| c.subject_did = other_subject.clone()),
            Box::new(|c| c.issuer_did = other_subject.clone()),
            Box::new(|c| {
                c.attributes.insert("name".into(), "Eve".into());
            }),
            Box::new(|c| {
                c.attributes.insert("role".into(), "admin".into());
            }),
            Box::new(|c| c.metadata_cid = Cid::of(b"other")),
            Box::new(|c| c.issued_at += 1),
            Box::new(|c| c.credential_id.0[0] ^= 1),
            Box::new(|c| c.scheme = "ed448".into()),
        ];
        for m in &mutations {
            let mut c = cred.clone();
            m(&mut c);
            assert!(!verify_credential(&c, &pk));
        }
    }

    #[test]
    fn wire_round_trip_is_strict() {
        let (cred, _) = fixture();
        let wire = cred.to_wire();
        assert_eq!(Credential::from_wire(&wire).unwrap(), cred);
        let pretty = serde_json::to_vec_pretty(&cred).unwrap();
        assert!(Credential::from_wire(&pretty).is_err());
    }

    #[test]
    fn document_privacy_scan() {
        assert!(check_document_privacy(&json!({"a": {"b": [1, "x"]}})).is_ok());
        assert!(check_document_privacy(&json!({"a": {"Embedding": 1}})).is_err());
        let smuggled = "00".repeat(EMBEDDING_WIRE_LEN);
        assert!(check_document_privacy(&json!({"note": smuggled})).is_err());
    }
}
