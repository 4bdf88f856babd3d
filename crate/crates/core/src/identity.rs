//! Self-certifying DIDs and signing keys.

use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// DID method used for every identifier minted here.
pub const DID_METHOD: &str = "ciph";

/// Identifier of the signature scheme; stored in credentials so that test
/// vectors are scheme-scoped.
pub const SIGNATURE_SCHEME: &str = "ed25519";

const IDENTIFIER_HEX_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DidError {
    #[error("DID must have the form did:<method>:<identifier>")]
    Malformed,
    #[error("unsupported DID method {0:?}")]
    UnknownMethod(String),
    #[error("identifier must be {IDENTIFIER_HEX_LEN} lowercase hex chars")]
    BadIdentifier,
}

/// `did:ciph:<first 32 hex chars of SHA-256(public key)>`
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Did {
    method: String,
    identifier: String,
}

impl Did {
    pub fn from_public_key(public_key: &PublicKey) -> Self {
        let digest = Sha256::digest(public_key.as_bytes());
        let mut identifier = hex::encode(digest);
        identifier.truncate(IDENTIFIER_HEX_LEN);
        Did {
            method: DID_METHOD.to_owned(),
            identifier,
        }
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn identifier(&self) -> &str {
        &self.identifier
    }

    /// True when `public_key` is the key this DID was derived from.
    pub fn is_controlled_by(&self, public_key: &PublicKey) -> bool {
        *self == Did::from_public_key(public_key)
    }
}

impl fmt::Display for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "did:{}:{}", self.method, self.identifier)
    }
}

impl fmt::Debug for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Did({self})")
    }
}

impl FromStr for Did {
    type Err = DidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.splitn(3, ':');
        let (Some("did"), Some(method), Some(identifier)) =
            (parts.next(), parts.next(), parts.next())
        else {
            return Err(DidError::Malformed);
        };
        if method != DID_METHOD {
            return Err(DidError::UnknownMethod(method.to_owned()));
        }
        let valid = identifier.len() == IDENTIFIER_HEX_LEN
            && identifier
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if !valid {
            return Err(DidError::BadIdentifier);
        }
        Ok(Did {
            method: method.to_owned(),
            identifier: identifier.to_owned(),
        })
    }
}

impl Serialize for Did {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Did {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// 32-byte Ed25519 verification key.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey([u8; 32]);

impl PublicKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        PublicKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Verify a detached signature. Malformed keys simply fail verification.
    pub fn verify(&self, message: &[u8], signature: &[u8; 64]) -> bool {
        let Ok(key) = VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        key.verify(message, &Signature::from_bytes(signature))
            .is_ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_hex())
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        crate::canonical::hex_bytes::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        crate::canonical::hex_bytes::deserialize(d).map(PublicKey)
    }
}

/// Signing key pair. Deliberately implements neither `Serialize` nor a
/// revealing `Debug`: the private half never leaves the holder through any
/// wire or persistence path in this crate.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    pub fn from_seed(seed: &[u8; 32]) -> Self {
        KeyPair {
            signing: SigningKey::from_bytes(seed),
        }
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> [u8; 64] {
        self.signing.sign(message).to_bytes()
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public_key", &self.public_key())
            .finish_non_exhaustive()
    }
}

/// Deterministically derive a DID and key pair from a 32-byte seed.
pub fn generate_identity(seed: &[u8; 32]) -> (Did, KeyPair) {
    let keys = KeyPair::from_seed(seed);
    (Did::from_public_key(&keys.public_key()), keys)
}

/// Derive a 32-byte seed from a label, for fixtures and simulations.
pub fn seed_from_label(label: &str) -> [u8; 32] {
    Sha256::digest(label.as_bytes()).into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn deterministic_from_zero_seed() {
        let (d1, k1) = generate_identity(&[0u8; 32]);
        let (d2, k2) = generate_identity(&[0u8; 32]);
        assert_eq!(d1, d2);
        assert_eq!(k1.public_key(), k2.public_key());
        assert_eq!(k1.sign(b"m"), k2.sign(b"m"));
    }

    #[test]
    fn did_derivation_matches_definition() {
        let (did, keys) = generate_identity(&[7u8; 32]);
        let expected = hex::encode(Sha256::digest(keys.public_key().as_bytes()));
        assert_eq!(did.to_string(), format!("did:ciph:{}", &expected[..32]));
        assert!(did.is_controlled_by(&keys.public_key()));
    }

    #[test]
    fn no_collisions_over_1000_seeds() {
        let dids: HashSet<String> = (0u32..1000)
            .map(|i| {
                let mut seed = [0u8; 32];
                seed[..4].copy_from_slice(&i.to_be_bytes());
                generate_identity(&seed).0.to_string()
            })
            .collect();
        assert_eq!(dids.len(), 1000);
    }

    #[test]
    fn parse_round_trip() {
        let (did, _) = generate_identity(&[3u8; 32]);
        let parsed: Did = did.to_string().parse().unwrap();
        assert_eq!(parsed, did);
    }

    #[test]
    fn parse_rejects() {
        assert_eq!("did:ciph".parse::<Did>(), Err(DidError::Malformed));
        assert_eq!(
            "did:web:0123456789abcdef0123456789abcdef".parse::<Did>(),
            Err(DidError::UnknownMethod("web".into()))
        );
        assert_eq!(
            "did:ciph:0123456789ABCDEF0123456789abcdef".parse::<Did>(),
            Err(DidError::BadIdentifier)
        );
        assert_eq!("did:ciph:abc".parse::<Did>(), Err(DidError::BadIdentifier));
    }

    #[test]
    fn sign_verify_and_wrong_key() {
        let (_, a) = generate_identity(&[1u8; 32]);
        let (_, b) = generate_identity(&[2u8; 32]);
        let sig = a.sign(b"payload");
        assert!(a.public_key().verify(b"payload", &sig));
        assert!(!b.public_key().verify(b"payload", &sig));
        assert!(!a.public_key().verify(b"payloaD", &sig));
    }

    #[test]
    fn debug_does_not_leak_private_key() {
        let seed = [0x5au8; 32];
        let (_, keys) = generate_identity(&seed);
        let dbg = format!("{keys:?}");
        assert!(!dbg.contains(&hex::encode(seed)));
    }
}
