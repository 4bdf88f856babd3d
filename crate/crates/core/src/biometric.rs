//! Synthetic facial embeddings, cosine matching, and template protection.
//!
//! Embeddings are unit vectors in `DIM` dimensions. A synthetic identity is a
//! seeded random direction; samples are that direction plus isotropic
//! Gaussian noise, renormalized. The enrolled reference for an identity is its
//! noise-free mean, and probes are noisy samples.

use aes_gcm::aead::Aead;
use aes_gcm::{Aes256Gcm, KeyInit, Nonce};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical::hex_bytes;

pub const DIM: usize = 128;
pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.05;

/// Fixed-point scale of the wire encoding (2^14).
const WIRE_SCALE: f64 = 16384.0;
/// Bytes in the wire encoding of a `DIM`-dimensional embedding.
pub const WIRE_LEN: usize = DIM * 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BiometricError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("noise sigma must be finite and non-negative, got {0}")]
    InvalidNoise(f64),
    #[error("template key must be 32 bytes, got {0}")]
    InvalidKeyLength(usize),
    #[error("template authentication failed")]
    AuthenticationFailure,
    #[error("template digest mismatch")]
    DigestMismatch,
    #[error("malformed wire encoding: {0}")]
    MalformedWire(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// Build an embedding from raw components, scaling to unit length.
    /// The zero vector is returned unchanged.
    pub fn normalized(values: Vec<f64>) -> Self {
        Embedding {
            values: normalize(values),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn negated(&self) -> Self {
        Embedding {
            values: self.values.iter().map(|v| -v).collect(),
        }
    }

    /// Big-endian signed 16-bit fixed point, scale 2^-14.
    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.values.len() * 2);
        for v in &self.values {
            let q = (v * WIRE_SCALE)
                .round()
                .clamp(i16::MIN as f64, i16::MAX as f64) as i16;
            out.extend_from_slice(&q.to_be_bytes());
        }
        out
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, BiometricError> {
        if !bytes.len().is_multiple_of(2) {
            return Err(BiometricError::MalformedWire(format!(
                "odd length {}",
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(2)
            .map(|c| i16::from_be_bytes([c[0], c[1]]) as f64 / WIRE_SCALE)
            .collect();
        Ok(Embedding { values })
    }

    pub fn wire_digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_wire()).into()
    }
}

fn normalize(mut values: Vec<f64>) -> Vec<f64> {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    values
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityProfile {
    pub profile_seed: [u8; 32],
    pub mean: Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub score: f64,
    pub accepted: bool,
    pub threshold: f64,
}

fn rng_for(domain: &[u8], seed: &[u8; 32]) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(domain);
    h.update(seed);
    ChaCha20Rng::from_seed(h.finalize().into())
}

pub fn make_profile(profile_seed: &[u8; 32]) -> IdentityProfile {
    let mut rng = rng_for(b"profile\0", profile_seed);
    let raw: Vec<f64> = (0..DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
    IdentityProfile {
        profile_seed: *profile_seed,
        mean: Embedding::normalized(raw),
    }
}

pub fn sample_embedding(
    profile: &IdentityProfile,
    noise_sigma: f64,
    sample_seed: &[u8; 32],
) -> Result<Embedding, BiometricError> {
    if !noise_sigma.is_finite() || noise_sigma < 0.0 {
        return Err(BiometricError::InvalidNoise(noise_sigma));
    }
    if noise_sigma == 0.0 {
        return Ok(profile.mean.clone());
    }
    let mut rng = rng_for(b"sample\0", sample_seed);
    let noisy = profile
        .mean
        .values
        .iter()
        .map(|m| {
            let z: f64 = StandardNormal.sample(&mut rng);
            m + noise_sigma * z
        })
        .collect();
    Ok(Embedding::normalized(noisy))
}

/// Reference template recorded at enrolment: the noise-free profile mean.
pub fn enrolment_reference(profile: &IdentityProfile) -> Embedding {
    profile.mean.clone()
}

/// Cosine similarity of two unit vectors, accumulated left to right.
pub fn match_embeddings(
    a: &Embedding,
    b: &Embedding,
    threshold: f64,
) -> Result<MatchResult, BiometricError> {
    if a.dim() != b.dim() {
        return Err(BiometricError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let mut score = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        score += x * y;
    }
    Ok(MatchResult {
        score,
        accepted: score >= threshold,
        threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtectedTemplate {
    pub key_id: String,
    #[serde(with = "hex_bytes")]
    pub nonce: [u8; 12],
    #[serde(with = "hex_vec")]
    pub ciphertext: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub digest: [u8; 32],
}

mod hex_vec {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        crate::canonical::decode_hex(&String::deserialize(d)?).map_err(D::Error::custom)
    }
}

fn cipher(key: &[u8]) -> Result<Aes256Gcm, BiometricError> {
    if key.len() != 32 {
        return Err(BiometricError::InvalidKeyLength(key.len()));
    }
    Aes256Gcm::new_from_slice(key).map_err(|_| BiometricError::InvalidKeyLength(key.len()))
}

/// Encrypt the wire encoding under AES-256-GCM and record its SHA-256.
pub fn protect_template<R: Rng + ?Sized>(
    embedding: &Embedding,
    key: &[u8],
    key_id: &str,
    rng: &mut R,
) -> Result<ProtectedTemplate, BiometricError> {
    let cipher = cipher(key)?;
    let mut nonce = [0u8; 12];
    rng.fill_bytes(&mut nonce);
    let wire = embedding.to_wire();
    let ciphertext = cipher
        .encrypt(&Nonce::from(nonce), wire.as_slice())
        .map_err(|_| BiometricError::AuthenticationFailure)?;
    Ok(ProtectedTemplate {
        key_id: key_id.to_owned(),
        nonce,
        ciphertext,
        digest: Sha256::digest(&wire).into(),
    })
}

pub fn recover_template(
    template: &ProtectedTemplate,
    key: &[u8],
) -> Result<Embedding, BiometricError> {
    let cipher = cipher(key)?;
    let wire = cipher
        .decrypt(&Nonce::from(template.nonce), template.ciphertext.as_slice())
        .map_err(|_| BiometricError::AuthenticationFailure)?;
    let digest: [u8; 32] = Sha256::digest(&wire).into();
    if digest != template.digest {
        return Err(BiometricError::DigestMismatch);
    }
    Embedding::from_wire(&wire)
}

/// What the capture pipeline reports about a frame.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameDescriptor {
    pub frame_id: String,
    #[serde(default)]
    pub replay: bool,
}

/// Plug point for a presentation-attack detector.
pub trait LivenessDetector {
    fn check_liveness(&self, frame: &FrameDescriptor) -> bool;
}

/// Placeholder detector returning a configured answer. In strict mode frames
/// flagged as replays are refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubLiveness {
    pub stub_result: bool,
    pub strict: bool,
}

impl Default for StubLiveness {
    fn default() -> Self {
        StubLiveness {
            stub_result: true,
            strict: false,
        }
    }
}

impl LivenessDetector for StubLiveness {
    fn check_liveness(&self, frame: &FrameDescriptor) -> bool {
        if self.strict && frame.replay {
            return false;
        }
        self.stub_result
    }
}
