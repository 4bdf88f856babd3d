//! Compact HMAC-SHA256 session tokens (`header.payload.tag`, base64url).

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::canonical;

type HmacSha256 = Hmac<Sha256>;

pub const DEFAULT_TOKEN_LIFETIME_S: u64 = 900;
/// Lingering acceptance window of the legacy expiry check.
pub const LEGACY_GRACE_S: u64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpiryPolicy {
    /// Reject once `now >= exp`.
    #[default]
    Strict,
    /// Fault injection: reproduces a session-timeout defect that keeps
    /// accepting tokens for `LEGACY_GRACE_S` seconds past `exp`.
    Legacy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    alg: String,
    typ: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claims {
    pub sub: String,
    pub sid: String,
    pub iat: u64,
    pub exp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    BadMac,
    Expired,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenValidity {
    Valid { sub: String, sid: String },
    Invalid(InvalidReason),
}

impl TokenValidity {
    pub fn is_valid(&self) -> bool {
        matches!(self, TokenValidity::Valid { .. })
    }
}

#[derive(Clone)]
pub struct TokenSigner {
    key: Vec<u8>,
    lifetime_s: u64,
    policy: ExpiryPolicy,
}

impl TokenSigner {
    pub fn new(key: impl Into<Vec<u8>>, lifetime_s: u64, policy: ExpiryPolicy) -> Self {
        TokenSigner {
            key: key.into(),
            lifetime_s,
            policy,
        }
    }

    pub fn lifetime_s(&self) -> u64 {
        self.lifetime_s
    }

    fn mac(&self) -> HmacSha256 {
        <HmacSha256 as KeyInit>::new_from_slice(&self.key).expect("HMAC accepts any key length")
    }

    pub fn mint(&self, sub: &str, sid: &str, now_s: u64) -> String {
        let header = Header {
            alg: "HS256".into(),
            typ: "JWT".into(),
        };
        let claims = Claims {
            sub: sub.to_owned(),
            sid: sid.to_owned(),
            iat: now_s,
            exp: now_s + self.lifetime_s,
        };
        let h = URL_SAFE_NO_PAD.encode(canonical::to_canonical(&header).expect("header"));
        let p = URL_SAFE_NO_PAD.encode(canonical::to_canonical(&claims).expect("claims"));
        let signing_input = format!("{h}.{p}");
        let mut mac = self.mac();
        mac.update(signing_input.as_bytes());
        let tag = URL_SAFE_NO_PAD.encode(mac.finalize().into_bytes());
        format!("{signing_input}.{tag}")
    }

    pub fn validate_token(&self, token: &str, now_s: u64) -> TokenValidity {
        let parts: Vec<&str> = token.split('.').collect();
        let [h, p, t] = parts.as_slice() else {
            return TokenValidity::Invalid(InvalidReason::Malformed);
        };
        let Ok(tag) = URL_SAFE_NO_PAD.decode(t) else {
            return TokenValidity::Invalid(InvalidReason::BadMac);
        };
        let mut mac = self.mac();
        mac.update(h.as_bytes());
        mac.update(b".");
        mac.update(p.as_bytes());
        if mac.verify_slice(&tag).is_err() {
            return TokenValidity::Invalid(InvalidReason::BadMac);
        }
        let header: Option<Header> = URL_SAFE_NO_PAD
            .decode(h)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok());
        let claims: Option<Claims> = URL_SAFE_NO_PAD
            .decode(p)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok());
        let (Some(header), Some(claims)) = (header, claims) else {
            return TokenValidity::Invalid(InvalidReason::Malformed);
        };
        if header.alg != "HS256" {
            return TokenValidity::Invalid(InvalidReason::Malformed);
        }
        let expired = match self.policy {
            ExpiryPolicy::Strict => now_s >= claims.exp,
            ExpiryPolicy::Legacy => now_s > claims.exp + LEGACY_GRACE_S,
        };
        if expired {
            return TokenValidity::Invalid(InvalidReason::Expired);
        }
        TokenValidity::Valid {
            sub: claims.sub,
            sid: claims.sid,
        }
    }
}

/// Decode the claims without checking the tag (for display only).
pub fn peek_claims(token: &str) -> Option<Claims> {
    let p = token.split('.').nth(1)?;
    serde_json::from_slice(&URL_SAFE_NO_PAD.decode(p).ok()?).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";

    fn signer() -> TokenSigner {
        TokenSigner::new(b"gateway-secret".to_vec(), 900, ExpiryPolicy::Strict)
    }

    #[test]
    fn fresh_token_valid() {
        let s = signer();
        let t = s.mint("did:ciph:00112233445566778899aabbccddeeff", "sess-1", 1000);
        assert_eq!(
            s.validate_token(&t, 1000),
            TokenValidity::Valid {
                sub: "did:ciph:00112233445566778899aabbccddeeff".into(),
                sid: "sess-1".into()
            }
        );
        assert_eq!(peek_claims(&t).unwrap().exp, 1900);
    }

    #[test]
    fn expiry_boundary() {
        let s = signer();
        let t = s.mint("sub", "sid", 1000);
        assert!(s.validate_token(&t, 1899).is_valid());
        assert_eq!(
            s.validate_token(&t, 1900),
            TokenValidity::Invalid(InvalidReason::Expired)
        );
    }

    #[test]
    fn legacy_policy_extends_access() {
        let s = TokenSigner::new(b"k".to_vec(), 900, ExpiryPolicy::Legacy);
        let t = s.mint("sub", "sid", 1000);
        assert!(s.validate_token(&t, 1900).is_valid());
        assert!(s.validate_token(&t, 1900 + LEGACY_GRACE_S).is_valid());
        assert!(!s.validate_token(&t, 1901 + LEGACY_GRACE_S).is_valid());
    }

    #[test]
    fn every_tag_character_mutation_is_bad_mac() {
        let s = signer();
        let t = s.mint("sub", "sid", 0);
        let tag_start = t.rfind('.').unwrap() + 1;
        let bytes = t.as_bytes();
        for pos in tag_start..bytes.len() {
            for &c in ALPHABET {
                if c == bytes[pos] {
                    continue;
                }
                let mut m = bytes.to_vec();
                m[pos] = c;
                let m = String::from_utf8(m).unwrap();
                assert_eq!(
                    s.validate_token(&m, 1),
                    TokenValidity::Invalid(InvalidReason::BadMac),
                    "pos {pos}"
                );
            }
        }
    }

    #[test]
    fn wrong_key_and_malformed() {
        let t = signer().mint("sub", "sid", 0);
        let other = TokenSigner::new(b"other".to_vec(), 900, ExpiryPolicy::Strict);
        assert_eq!(
            other.validate_token(&t, 1),
            TokenValidity::Invalid(InvalidReason::BadMac)
        );
        assert_eq!(
            signer().validate_token("a.b", 1),
            TokenValidity::Invalid(InvalidReason::Malformed)
        );
        assert_eq!(
            signer().validate_token("a.b.c.d", 1),
            TokenValidity::Invalid(InvalidReason::Malformed)
        );
    }

    #[test]
    fn correctly_tagged_garbage_is_malformed() {
        let s = signer();
        let h = URL_SAFE_NO_PAD.encode(b"not json");
        let p = URL_SAFE_NO_PAD.encode(b"{}");
        let mut mac = s.mac();
        mac.update(format!("{h}.{p}").as_bytes());
        let tag = URL_SAFE_NO_PAD.encode(mac.finalize().into_bytes());
        assert_eq!(
            s.validate_token(&format!("{h}.{p}.{tag}"), 0),
            TokenValidity::Invalid(InvalidReason::Malformed)
        );
    }
}
