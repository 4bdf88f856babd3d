//! Per-node cached views of the revocation ledger.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::ledger::LedgerRead;
use crate::credential::CredentialId;

pub const DEFAULT_POLL_INTERVAL_MS: u64 = 500;
pub const DEFAULT_TTL_MS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Refresh when the view is at least `poll_interval_ms` old.
    #[default]
    Polling,
    /// Refresh when a revocation notification arrives.
    EventDriven,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerView {
    pub node_id: String,
    revoked_set: HashSet<CredentialId>,
    pub as_of_height: u64,
    pub fetched_at: u64,
    pub ttl_ms: u64,
    pub poll_interval_ms: u64,
    pub mode: CacheMode,
}

/// Answer to a revocation query, tagged with the height it reflects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationStatus {
    pub revoked: bool,
    pub as_of_height: u64,
}

impl LedgerView {
    /// A view fetched from `ledger` at `now`.
    pub fn fetch<L: LedgerRead + ?Sized>(
        node_id: impl Into<String>,
        ledger: &L,
        now: u64,
        poll_interval_ms: u64,
        ttl_ms: u64,
        mode: CacheMode,
    ) -> Self {
        let view = LedgerView {
            node_id: node_id.into(),
            revoked_set: HashSet::new(),
            as_of_height: 0,
            fetched_at: now,
            ttl_ms,
            poll_interval_ms,
            mode,
        };
        view.refreshed(ledger, now)
    }

    pub fn age(&self, now: u64) -> u64 {
        now.saturating_sub(self.fetched_at)
    }

    /// Older than the TTL: must be refreshed before it is used.
    pub fn is_stale(&self, now: u64) -> bool {
        self.age(now) >= self.ttl_ms
    }

    pub fn revoked_count(&self) -> usize {
        self.revoked_set.len()
    }

    /// Unconditional refresh: catch up to the ledger's current height.
    pub fn refreshed<L: LedgerRead + ?Sized>(&self, ledger: &L, now: u64) -> Self {
        let mut next = self.clone();
        let height = ledger.height();
        if height > next.as_of_height {
            for block in ledger.blocks_from(next.as_of_height) {
                next.revoked_set
                    .extend(block.events.iter().map(|e| e.credential_id));
            }
        }
        next.as_of_height = next.as_of_height.max(height);
        next.fetched_at = now;
        next
    }
}

/// Poll-driven refresh. In polling mode the view refreshes only once it is at
/// least `poll_interval_ms` old; event-driven views ignore polls.
pub fn refresh_view<L: LedgerRead + ?Sized>(
    view: &LedgerView,
    ledger: &L,
    node_now: u64,
) -> LedgerView {
    match view.mode {
        CacheMode::Polling if view.age(node_now) >= view.poll_interval_ms => {
            view.refreshed(ledger, node_now)
        }
        _ => view.clone(),
    }
}

/// Notification-driven refresh; only event-driven views react.
pub fn notify_view<L: LedgerRead + ?Sized>(
    view: &LedgerView,
    ledger: &L,
    node_now: u64,
) -> LedgerView {
    match view.mode {
        CacheMode::EventDriven => view.refreshed(ledger, node_now),
        CacheMode::Polling => view.clone(),
    }
}

pub fn is_revoked(view: &LedgerView, credential_id: &CredentialId) -> RevocationStatus {
    RevocationStatus {
        revoked: view.revoked_set.contains(credential_id),
        as_of_height: view.as_of_height,
    }
}
