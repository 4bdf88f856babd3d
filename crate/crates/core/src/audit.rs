//! Per-node hash-chained audit logs.
//!
//! Two write policies: `Naive` appends in arrival order, so nodes that see
//! the same events in different orders end with different chains.
//! `Deterministic` holds events for a settle delay and appends them in
//! `(event_time, event_id)` order, which converges whenever every event
//! arrives within the settle delay.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical::{self, hex_bytes};
use crate::identity::Did;

pub const DEFAULT_SETTLE_DELAY_MS: u64 = 250;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditEventType {
    Enroll,
    AuthAccept,
    AuthReject,
    Revoke,
    ViewRefresh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditPolicy {
    /// Fault injection: append in arrival order.
    Naive,
    #[default]
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub event_type: AuditEventType,
    pub actor_did: Did,
    pub payload: Value,
    pub event_time: u64,
    #[serde(with = "hex_bytes")]
    pub event_id: [u8; 16],
}

impl AuditEvent {
    fn order_key(&self) -> (u64, [u8; 16]) {
        (self.event_time, self.event_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditEntry {
    pub seq: u64,
    #[serde(with = "hex_bytes")]
    pub prev_hash: [u8; 32],
    pub event_type: AuditEventType,
    pub actor_did: Did,
    #[serde(with = "hex_bytes")]
    pub payload_digest: [u8; 32],
    pub event_time: u64,
    #[serde(with = "hex_bytes")]
    pub event_id: [u8; 16],
    #[serde(with = "hex_bytes")]
    pub entry_hash: [u8; 32],
}

#[derive(Serialize)]
struct EntryBody<'a> {
    seq: u64,
    #[serde(with = "hex_bytes")]
    prev_hash: [u8; 32],
    event_type: AuditEventType,
    actor_did: &'a Did,
    #[serde(with = "hex_bytes")]
    payload_digest: [u8; 32],
    event_time: u64,
    #[serde(with = "hex_bytes")]
    event_id: [u8; 16],
}

impl AuditEntry {
    pub fn compute_hash(&self) -> [u8; 32] {
        canonical::canonical_digest(&EntryBody {
            seq: self.seq,
            prev_hash: self.prev_hash,
            event_type: self.event_type,
            actor_did: &self.actor_did,
            payload_digest: self.payload_digest,
            event_time: self.event_time,
            event_id: self.event_id,
        })
        .expect("entry body is canonicalizable")
    }

    pub fn to_line(&self) -> Vec<u8> {
        canonical::to_canonical(self).expect("entry is canonicalizable")
    }

    pub fn from_line(line: &[u8]) -> Result<Self, String> {
        let e: AuditEntry = serde_json::from_slice(line).map_err(|e| e.to_string())?;
        if e.to_line() != line {
            return Err("non-canonical encoding".into());
        }
        Ok(e)
    }
}

#[derive(Debug, Clone)]
pub struct AuditLog {
    policy: AuditPolicy,
    settle_delay_ms: u64,
    entries: Vec<AuditEntry>,
    pending: BTreeMap<(u64, [u8; 16]), AuditEvent>,
    late_events: u64,
}

impl AuditLog {
    pub fn new(policy: AuditPolicy, settle_delay_ms: u64) -> Self {
        AuditLog {
            policy,
            settle_delay_ms,
            entries: Vec::new(),
            pending: BTreeMap::new(),
            late_events: 0,
        }
    }

    /// Continue an existing log. Refuses a chain that does not verify.
    pub fn resume(
        policy: AuditPolicy,
        settle_delay_ms: u64,
        entries: Vec<AuditEntry>,
    ) -> Result<Self, LogStatus> {
        match verify_log(&entries) {
            LogStatus::Ok => Ok(AuditLog {
                entries,
                ..AuditLog::new(policy, settle_delay_ms)
            }),
            broken => Err(broken),
        }
    }

    pub fn policy(&self) -> AuditPolicy {
        self.policy
    }

    pub fn entries(&self) -> &[AuditEntry] {
        &self.entries
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Events that reached a deterministic log after a later-ordered event
    /// had already been written.
    pub fn late_events(&self) -> u64 {
        self.late_events
    }

    pub fn head_hash(&self) -> [u8; 32] {
        self.entries
            .last()
            .map(|e| e.entry_hash)
            .unwrap_or([0u8; 32])
    }

    /// Earliest time at which a buffered event becomes due, if any.
    pub fn next_due(&self) -> Option<u64> {
        self.pending
            .keys()
            .next()
            .map(|(t, _)| t.saturating_add(self.settle_delay_ms))
    }

    /// Accept an event that arrived at `arrival_time`. Returns the entries
    /// written as a consequence (none if the event is buffered).
    pub fn append_event(&mut self, event: AuditEvent, arrival_time: u64) -> Vec<AuditEntry> {
        match self.policy {
            AuditPolicy::Naive => vec![self.write(&event)],
            AuditPolicy::Deterministic => {
                let written_past = self
                    .entries
                    .last()
                    .is_some_and(|last| (last.event_time, last.event_id) > event.order_key());
                if written_past {
                    self.late_events += 1;
                }
                self.pending.insert(event.order_key(), event);
                self.flush_due(arrival_time)
            }
        }
    }

    /// Write every buffered event whose settle delay has elapsed by `now`.
    pub fn flush_due(&mut self, now: u64) -> Vec<AuditEntry> {
        let mut written = Vec::new();
        while let Some(entry) = self.pending.first_entry() {
            if entry.key().0.saturating_add(self.settle_delay_ms) > now {
                break;
            }
            let event = entry.remove();
            written.push(self.write(&event));
        }
        written
    }

    pub fn flush_all(&mut self) -> Vec<AuditEntry> {
        self.flush_due(u64::MAX)
    }

    fn write(&mut self, event: &AuditEvent) -> AuditEntry {
        let mut entry = AuditEntry {
            seq: self.entries.len() as u64,
            prev_hash: self.head_hash(),
            event_type: event.event_type,
            actor_did: event.actor_did.clone(),
            payload_digest: canonical::canonical_digest(&event.payload).unwrap_or_else(|_| {
                // payloads with floats/nulls are digested through their JSON text
                sha2::Digest::finalize(sha2::Digest::chain_update(
                    <sha2::Sha256 as sha2::Digest>::new(),
                    event.payload.to_string(),
                ))
                .into()
            }),
            event_time: event.event_time,
            event_id: event.event_id,
            entry_hash: [0u8; 32],
        };
        entry.entry_hash = entry.compute_hash();
        self.entries.push(entry.clone());
        entry
    }

    pub fn export(&self) -> Vec<u8> {
        export_entries(&self.entries)
    }
}

pub fn export_entries(entries: &[AuditEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    for e in entries {
        out.extend_from_slice(&e.to_line());
        out.push(b'\n');
    }
    out
}

/// Parse a line-delimited export. Errors carry the 1-based line number.
pub fn import_entries(data: &[u8]) -> Result<Vec<AuditEntry>, (usize, String)> {
    data.split(|b| *b == b'\n')
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| AuditEntry::from_line(l).map_err(|m| (i + 1, m)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LogStatus {
    Ok,
    Broken { first_bad_seq: u64 },
}

pub fn verify_log(entries: &[AuditEntry]) -> LogStatus {
    let mut prev = [0u8; 32];
    for (i, e) in entries.iter().enumerate() {
        let i = i as u64;
        if e.seq != i || e.prev_hash != prev || e.compute_hash() != e.entry_hash {
            return LogStatus::Broken { first_bad_seq: i };
        }
        prev = e.entry_hash;
    }
    LogStatus::Ok
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    None,
    Reordered,
    Missing,
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DivergenceKind::None => "none",
            DivergenceKind::Reordered => "reordered",
            DivergenceKind::Missing => "missing",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub node_count: usize,
    pub head_hashes: Vec<String>,
    pub entry_counts: Vec<usize>,
    pub diverged: bool,
    pub first_divergent_seq: Option<u64>,
    pub event_multisets_equal: bool,
    pub kind: DivergenceKind,
}

pub fn compare_logs(logs: &[&[AuditEntry]]) -> ConsistencyReport {
    let heads: Vec<[u8; 32]> = logs
        .iter()
        .map(|l| l.last().map(|e| e.entry_hash).unwrap_or([0u8; 32]))
        .collect();
    let diverged = heads.windows(2).any(|w| w[0] != w[1]);

    let first_divergent_seq = if diverged {
        let longest = logs.iter().map(|l| l.len()).max().unwrap_or(0);
        (0..longest)
            .find(|&i| {
                let first = logs[0].get(i).map(|e| e.entry_hash);
                logs.iter().any(|l| l.get(i).map(|e| e.entry_hash) != first)
            })
            .map(|i| i as u64)
    } else {
        None
    };

    let multiset = |l: &[AuditEntry]| -> BTreeMap<[u8; 16], usize> {
        let mut m = BTreeMap::new();
        for e in l {
            *m.entry(e.event_id).or_insert(0) += 1;
        }
        m
    };
    let sets: Vec<_> = logs.iter().map(|l| multiset(l)).collect();
    let event_multisets_equal = sets.windows(2).all(|w| w[0] == w[1]);

    let kind = match (diverged, event_multisets_equal) {
        (false, _) => DivergenceKind::None,
        (true, true) => DivergenceKind::Reordered,
        (true, false) => DivergenceKind::Missing,
    };

    ConsistencyReport {
        node_count: logs.len(),
        head_hashes: heads.iter().map(hex::encode).collect(),
        entry_counts: logs.iter().map(|l| l.len()).collect(),
        diverged,
        first_divergent_seq,
        event_multisets_equal,
        kind,
    }
}

impl ConsistencyReport {
    /// Event ids present in some log but not all.
    pub fn missing_ids(logs: &[&[AuditEntry]]) -> BTreeSet<[u8; 16]> {
        let all: BTreeSet<_> = logs
            .iter()
            .flat_map(|l| l.iter().map(|e| e.event_id))
            .collect();
        all.into_iter()
            .filter(|id| !logs.iter().all(|l| l.iter().any(|e| &e.event_id == id)))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "node,entries,head_hash,diverged,first_divergent_seq,event_multisets_equal,kind\n",
        );
        for (i, (head, count)) in self.head_hashes.iter().zip(&self.entry_counts).enumerate() {
            out.push_str(&format!(
                "{i},{count},{head},{},{},{},{}\n",
                self.diverged,
                self.first_divergent_seq
                    .map(|s| s.to_string())
                    .unwrap_or_default(),
                self.event_multisets_equal,
                self.kind
            ));
        }
        out
    }
}
