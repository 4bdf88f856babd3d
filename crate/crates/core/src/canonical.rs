//! Canonical document encoding.
//!
//! Every hash and signature in the crate is computed over this encoding:
//! JSON text with map keys sorted bytewise, no insignificant whitespace,
//! integers in shortest decimal form. Byte strings travel as lowercase hex
//! strings. Floats and nulls are rejected outright.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CanonicalError {
    #[error("unsupported value at {path}: {kind}")]
    UnsupportedValue { path: String, kind: &'static str },
    #[error("serialization failed: {0}")]
    Serialize(String),
}

/// Encode a structured document into its canonical byte form.
pub fn canonicalize(value: &Value) -> Result<Vec<u8>, CanonicalError> {
    let mut out = Vec::with_capacity(128);
    encode(value, &mut out, &mut String::from("$"))?;
    Ok(out)
}

/// Serialize any `Serialize` type through `serde_json::Value` and canonicalize it.
pub fn to_canonical<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CanonicalError> {
    let v = serde_json::to_value(value).map_err(|e| CanonicalError::Serialize(e.to_string()))?;
    canonicalize(&v)
}

/// SHA-256 over the canonical form.
pub fn canonical_digest<T: Serialize + ?Sized>(value: &T) -> Result<[u8; 32], CanonicalError> {
    Ok(Sha256::digest(to_canonical(value)?).into())
}

fn encode(value: &Value, out: &mut Vec<u8>, path: &mut String) -> Result<(), CanonicalError> {
    match value {
        Value::Null => Err(CanonicalError::UnsupportedValue {
            path: path.clone(),
            kind: "null",
        }),
        Value::Bool(b) => {
            out.extend_from_slice(if *b { b"true" } else { b"false" });
            Ok(())
        }
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                out.extend_from_slice(u.to_string().as_bytes());
            } else if let Some(i) = n.as_i64() {
                out.extend_from_slice(i.to_string().as_bytes());
            } else {
                return Err(CanonicalError::UnsupportedValue {
                    path: path.clone(),
                    kind: "float",
                });
            }
            Ok(())
        }
        Value::String(s) => {
            write_string(s, out);
            Ok(())
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                let len = path.len();
                path.push_str(&format!("[{i}]"));
                encode(item, out, path)?;
                path.truncate(len);
            }
            out.push(b']');
            Ok(())
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort_unstable_by(|a, b| a.as_bytes().cmp(b.as_bytes()));
            out.push(b'{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(key, out);
                out.push(b':');
                let len = path.len();
                path.push('.');
                path.push_str(key);
                encode(&map[key], out, path)?;
                path.truncate(len);
            }
            out.push(b'}');
            Ok(())
        }
    }
}

fn write_string(s: &str, out: &mut Vec<u8>) {
    out.push(b'"');
    for ch in s.chars() {
        match ch {
            '"' => out.extend_from_slice(b"\\\""),
            '\\' => out.extend_from_slice(b"\\\\"),
            '\n' => out.extend_from_slice(b"\\n"),
            '\r' => out.extend_from_slice(b"\\r"),
            '\t' => out.extend_from_slice(b"\\t"),
            '\u{08}' => out.extend_from_slice(b"\\b"),
            '\u{0c}' => out.extend_from_slice(b"\\f"),
            c if (c as u32) < 0x20 => {
                out.extend_from_slice(format!("\\u{:04x}", c as u32).as_bytes());
            }
            c => {
                let mut buf = [0u8; 4];
                out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            }
        }
    }
    out.push(b'"');
}

/// Serde helpers for fixed-size byte arrays carried as lowercase hex.
pub mod hex_bytes {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(v: &[u8; N], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(
        d: D,
    ) -> Result<[u8; N], D::Error> {
        let s = String::deserialize(d)?;
        super::decode_hex_array(&s).map_err(D::Error::custom)
    }
}

/// Strict lowercase hex decoding into a fixed-size array.
pub fn decode_hex_array<const N: usize>(s: &str) -> Result<[u8; N], String> {
    let v = decode_hex(s)?;
    v.try_into()
        .map_err(|v: Vec<u8>| format!("expected {N} bytes, got {}", v.len()))
}

/// Strict lowercase hex decoding. Uppercase digits are rejected so that every
/// byte string has exactly one textual form.
pub fn decode_hex(s: &str) -> Result<Vec<u8>, String> {
    if s.bytes().any(|b| b.is_ascii_uppercase()) {
        return Err("hex must be lowercase".into());
    }
    hex::decode(s).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn key_order_is_irrelevant() {
        let a = canonicalize(&json!({"b": 1, "a": 2})).unwrap();
        let b = canonicalize(&json!({"a": 2, "b": 1})).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, br#"{"a":2,"b":1}"#);
    }

    #[test]
    fn empty_map() {
        assert_eq!(canonicalize(&json!({})).unwrap(), b"{}");
    }

    #[test]
    fn rejects_float_and_null() {
        assert!(matches!(
            canonicalize(&json!({"x": 1.5})),
            Err(CanonicalError::UnsupportedValue { kind: "float", .. })
        ));
        let err = canonicalize(&json!({"x": [1, null]})).unwrap_err();
        assert_eq!(
            err,
            CanonicalError::UnsupportedValue {
                path: "$.x[1]".into(),
                kind: "null"
            }
        );
    }

    #[test]
    fn integers_shortest_form() {
        assert_eq!(
            canonicalize(&json!([0, -7, u64::MAX])).unwrap(),
            b"[0,-7,18446744073709551615]"
        );
    }

    #[test]
    fn bytewise_key_sort() {
        // 'Z' (0x5a) sorts before 'a' (0x61); multi-byte UTF-8 sorts last.
        let out = canonicalize(&json!({"a": true, "é": false, "Z": true})).unwrap();
        assert_eq!(out, "{\"Z\":true,\"a\":true,\"é\":false}".as_bytes());
    }

    #[test]
    fn escapes() {
        let out = canonicalize(&json!("q\"\\\n\u{1}")).unwrap();
        assert_eq!(out, br#""q\"\\\n\u0001""#);
    }

    #[test]
    fn strict_hex() {
        assert!(decode_hex("ABCD").is_err());
        assert_eq!(decode_hex("abcd").unwrap(), vec![0xab, 0xcd]);
        assert!(decode_hex_array::<3>("abcd").is_err());
    }
}
