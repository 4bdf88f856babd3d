//! Per-identity token buckets.
//!
//! Buckets are keyed by a keyed hash of the DID, never the DID itself, and a
//! bucket that has refilled to capacity is indistinguishable from an absent
//! one, so `prune` drops it.

use std::collections::HashMap;

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

pub const DEFAULT_CAPACITY: u64 = 20;
pub const DEFAULT_REFILL_PER_S: u64 = 10;

/// Token amounts are tracked in thousandths so refill is exact in integer ms.
const MILLI: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketState {
    pub capacity: u64,
    pub refill_per_s: u64,
    pub milli_tokens: u64,
    pub last_refill_ms: u64,
}

impl BucketState {
    fn full(capacity: u64, refill_per_s: u64, now_ms: u64) -> Self {
        BucketState {
            capacity,
            refill_per_s,
            milli_tokens: capacity * MILLI,
            last_refill_ms: now_ms,
        }
    }

    fn refill(&mut self, now_ms: u64) {
        let elapsed = now_ms.saturating_sub(self.last_refill_ms);
        // refill_per_s tokens/s == refill_per_s milli-tokens per ms
        self.milli_tokens =
            (self.milli_tokens + elapsed * self.refill_per_s).min(self.capacity * MILLI);
        self.last_refill_ms = self.last_refill_ms.max(now_ms);
    }

    fn try_take(&mut self, now_ms: u64) -> bool {
        self.refill(now_ms);
        if self.milli_tokens >= MILLI {
            self.milli_tokens -= MILLI;
            true
        } else {
            false
        }
    }

    pub fn tokens(&self) -> f64 {
        self.milli_tokens as f64 / MILLI as f64
    }
}

pub struct RateLimiter {
    capacity: u64,
    refill_per_s: u64,
    key: [u8; 32],
    buckets: HashMap<[u8; 32], BucketState>,
}

impl RateLimiter {
    pub fn new(capacity: u64, refill_per_s: u64, key: [u8; 32]) -> Self {
        RateLimiter {
            capacity,
            refill_per_s,
            key,
            buckets: HashMap::new(),
        }
    }

    fn bucket_key(&self, subject: &str) -> [u8; 32] {
        let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(&self.key).expect("any key length");
        mac.update(subject.as_bytes());
        mac.finalize().into_bytes().into()
    }

    /// Admit one request for `subject` at `now_ms`.
    pub fn admit(&mut self, subject: &str, now_ms: u64) -> bool {
        let key = self.bucket_key(subject);
        let (capacity, refill) = (self.capacity, self.refill_per_s);
        self.buckets
            .entry(key)
            .or_insert_with(|| BucketState::full(capacity, refill, now_ms))
            .try_take(now_ms)
    }

    /// Drop buckets that have refilled to capacity.
    pub fn prune(&mut self, now_ms: u64) {
        self.buckets.retain(|_, b| {
            b.refill(now_ms);
            b.milli_tokens < b.capacity * MILLI
        });
    }

    pub fn snapshot(&self) -> Vec<([u8; 32], BucketState)> {
        let mut v: Vec<_> = self.buckets.iter().map(|(k, b)| (*k, *b)).collect();
        v.sort_by_key(|(k, _)| *k);
        v
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: replay the bucket one millisecond at a time using
    /// floating-point token counts.
    fn oracle(capacity: f64, refill_per_s: f64, calls: &[u64]) -> Vec<bool> {
        let mut tokens = capacity;
        let mut t = 0u64;
        let mut out = Vec::new();
        for &at in calls {
            while t < at {
                tokens = (tokens + refill_per_s / 1000.0).min(capacity);
                t += 1;
            }
            if tokens >= 1.0 - 1e-9 {
                tokens -= 1.0;
                out.push(true);
            } else {
                out.push(false);
            }
        }
        out
    }

    #[test]
    fn twenty_first_call_in_a_burst_is_limited() {
        let mut rl = RateLimiter::new(20, 10, [0; 32]);
        let calls: Vec<u64> = (0..21).map(|i| i * 2).collect();
        let got: Vec<bool> = calls.iter().map(|&t| rl.admit("did:x", t)).collect();
        assert_eq!(got, oracle(20.0, 10.0, &calls));
        assert!(got[..20].iter().all(|&a| a));
        assert!(!got[20]);
    }

    #[test]
    fn matches_oracle_on_mixed_trace() {
        let mut calls = Vec::new();
        let mut t = 0;
        for i in 0..200u64 {
            t += [0, 3, 17, 40, 95, 250][(i * 7 % 6) as usize];
            calls.push(t);
        }
        let mut rl = RateLimiter::new(20, 10, [1; 32]);
        let got: Vec<bool> = calls.iter().map(|&t| rl.admit("did:y", t)).collect();
        assert_eq!(got, oracle(20.0, 10.0, &calls));
    }

    #[test]
    fn subjects_are_independent_and_pruned() {
        let mut rl = RateLimiter::new(2, 10, [2; 32]);
        assert!(rl.admit("a", 0));
        assert!(rl.admit("a", 0));
        assert!(!rl.admit("a", 0));
        assert!(rl.admit("b", 0));
        assert_eq!(rl.len(), 2);
        rl.prune(50);
        assert_eq!(rl.len(), 2);
        rl.prune(1000);
        assert!(rl.is_empty());
    }

    #[test]
    fn keys_do_not_contain_subject() {
        let mut rl = RateLimiter::new(2, 10, [3; 32]);
        rl.admit("did:ciph:00112233445566778899aabbccddeeff", 0);
        let dump = format!("{:?}", rl.snapshot());
        assert!(!dump.contains("did:ciph"));
    }
}
