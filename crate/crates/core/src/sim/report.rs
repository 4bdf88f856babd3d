//! Run reports and their JSON/CSV renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::audit::{AuditPolicy, ConsistencyReport};
use crate::gateway::Outcome;
use crate::trust::CacheMode;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthRecord {
    pub index: usize,
    pub subject: String,
    pub impostor: bool,
    /// When the client sent the auth request.
    pub sent_at: u64,
    pub decided_at: u64,
    /// When the response reached the client.
    pub completed_at: u64,
    pub latency_ms: u64,
    pub outcome: Outcome,
    pub reason: Option<String>,
    pub accept_votes: usize,
    pub missing_votes: usize,
    pub stale_votes: u32,
    /// The credential was already revoked on the ledger when the gateway
    /// received the request.
    pub revoked_at_send: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationWindow {
    pub subject: String,
    pub credential_id: String,
    pub height: u64,
    pub committed_at: u64,
    /// Per node, when its view first reached `height`.
    pub node_caught_up: Vec<Option<u64>>,
    /// Commit to last node caught up; `None` if some node never did.
    pub window_ms: Option<u64>,
}

/// A node voted accept for a credential the ledger had already revoked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaleAcceptance {
    pub auth: usize,
    pub node: String,
    pub at: u64,
    pub view_height: u64,
    pub revocation_height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    pub n_nodes: usize,
    pub quorum: usize,
    pub cache_mode: CacheMode,
    pub audit_policy: AuditPolicy,
    pub unilateral: bool,
    pub window_bound_ms: u64,
    pub revocations: Vec<RevocationWindow>,
    pub auths: Vec<AuthRecord>,
    pub stale_acceptances: Vec<StaleAcceptance>,
    pub audit: ConsistencyReport,
    pub late_audit_events: Vec<u64>,
    pub violations: Vec<String>,
    pub end_time: u64,
}

impl SimReport {
    pub fn max_window_ms(&self) -> Option<u64> {
        self.revocations.iter().filter_map(|r| r.window_ms).max()
    }

    /// Auths whose request reached the gateway after the revocation committed
    /// but whose decision came before every node had caught up.
    pub fn auths_inside_window(&self) -> Vec<&AuthRecord> {
        self.auths
            .iter()
            .filter(|a| a.revoked_at_send)
            .filter(|a| {
                self.revocations.iter().any(|r| {
                    r.subject == a.subject
                        && r.node_caught_up
                            .iter()
                            .any(|c| c.is_none_or(|t| t > a.decided_at))
                })
            })
            .collect()
    }

    pub fn stale_accepted_auths(&self) -> usize {
        self.auths
            .iter()
            .filter(|a| a.revoked_at_send && a.outcome == Outcome::Accept)
            .count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per revocation and per authentication.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "record,index,subject,time_ms,height,window_ms,outcome,reason,accept_votes,stale_votes,latency_ms\n",
        );
        for (i, r) in self.revocations.iter().enumerate() {
            let window = r.window_ms.map(|w| w.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "revocation,{i},{},{},{},{window},,,,,",
                r.subject, r.committed_at, r.height
            );
        }
        for a in &self.auths {
            let outcome = match a.outcome {
                Outcome::Accept => "accept",
                Outcome::Reject => "reject",
            };
            let _ = writeln!(
                out,
                "auth,{},{},{},,,{outcome},{},{},{},{}",
                a.index,
                a.subject,
                a.sent_at,
                a.reason.as_deref().unwrap_or(""),
                a.accept_votes,
                a.stale_votes,
                a.latency_ms
            );
        }
        out
    }
}

/// Nearest-rank percentile of sorted samples: the value at rank ceil(p*N).
pub fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySample {
    pub client: String,
    pub sent_at: u64,
    pub latency_ms: u64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub count: usize,
    pub accepted: usize,
    pub p50_ms: u64,
    pub p95_ms: u64,
    pub p99_ms: u64,
    pub max_ms: u64,
    pub mean_ms: f64,
    pub throughput_per_s: f64,
    pub duration_ms: u64,
    pub node_processed: Vec<u64>,
    /// Busy time per component; a proxy for CPU use.
    pub gateway_busy_ms: u64,
    pub node_busy_ms: Vec<u64>,
    /// Real mode only: CPU share of each node process, then the gateway.
    #[serde(default)]
    pub cpu_percent: Vec<f64>,
    pub samples: Vec<LatencySample>,
}

impl LatencyReport {
    pub fn from_samples(
        samples: Vec<LatencySample>,
        duration_ms: u64,
        node_processed: Vec<u64>,
        gateway_busy_ms: u64,
        node_busy_ms: Vec<u64>,
    ) -> Self {
        let mut sorted: Vec<u64> = samples.iter().map(|s| s.latency_ms).collect();
        sorted.sort_unstable();
        let count = sorted.len();
        let mean_ms = if count == 0 {
            0.0
        } else {
            sorted.iter().sum::<u64>() as f64 / count as f64
        };
        let throughput_per_s = if duration_ms == 0 {
            0.0
        } else {
            count as f64 * 1000.0 / duration_ms as f64
        };
        LatencyReport {
            count,
            accepted: samples.iter().filter(|s| s.accepted).count(),
            p50_ms: percentile(&sorted, 0.50),
            p95_ms: percentile(&sorted, 0.95),
            p99_ms: percentile(&sorted, 0.99),
            max_ms: sorted.last().copied().unwrap_or(0),
            mean_ms,
            throughput_per_s,
            duration_ms,
            node_processed,
            gateway_busy_ms,
            node_busy_ms,
            cpu_percent: Vec::new(),
            samples,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per request.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("client,sent_at_ms,latency_ms,accepted\n");
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                s.client, s.sent_at, s.latency_ms, s.accepted
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}
