//! Scenario and load configurations (JSON).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditPolicy, DEFAULT_SETTLE_DELAY_MS};
use crate::gateway::{default_quorum, DEFAULT_NODE_TIMEOUT_MS};
use crate::trust::view::{DEFAULT_POLL_INTERVAL_MS, DEFAULT_TTL_MS};
use crate::trust::CacheMode;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
}

fn config_err(msg: impl Into<String>) -> SimError {
    SimError::Config(msg.into())
}

/// One-way message delay on a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatencyModel {
    Fixed { ms: u64 },
    Uniform { min_ms: u64, max_ms: u64 },
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::Fixed { ms: 0 }
    }
}

impl LatencyModel {
    pub fn max_ms(&self) -> u64 {
        match *self {
            LatencyModel::Fixed { ms } => ms,
            LatencyModel::Uniform { max_ms, .. } => max_ms,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match *self {
            LatencyModel::Uniform { min_ms, max_ms } if min_ms > max_ms => Err(config_err(
                format!("uniform latency min {min_ms} > max {max_ms}"),
            )),
            _ => Ok(()),
        }
    }
}

fn default_poll() -> u64 {
    DEFAULT_POLL_INTERVAL_MS
}

fn default_ttl() -> u64 {
    DEFAULT_TTL_MS
}

fn default_settle() -> u64 {
    DEFAULT_SETTLE_DELAY_MS
}

fn default_timeout() -> u64 {
    DEFAULT_NODE_TIMEOUT_MS
}

fn default_count() -> u32 {
    1
}

fn default_nodes() -> usize {
    crate::node::DEFAULT_NODE_COUNT
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    /// Enrol `subject`, or `subject-0 .. subject-(count-1)` when count > 1.
    Enroll {
        subject: String,
        #[serde(default = "default_count")]
        count: u32,
    },
    /// One authentication. An impostor presents someone else's face.
    Auth {
        subject: String,
        #[serde(default)]
        impostor: bool,
    },
    Revoke {
        subject: String,
    },
    /// Revoke `subject-0 .. subject-(count-1)`, `spacing_ms` apart.
    RevokeBurst {
        subject: String,
        count: u32,
        #[serde(default)]
        spacing_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedAction {
    pub at_ms: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default = "default_nodes")]
    pub n_nodes: usize,
    #[serde(default)]
    pub quorum: Option<usize>,
    /// Gateway/ledger to node links.
    #[serde(default)]
    pub latency: LatencyModel,
    /// Per-node overrides keyed by node id (`node-0`, ...).
    #[serde(default)]
    pub link_latency: BTreeMap<String, LatencyModel>,
    /// Client to gateway link.
    #[serde(default)]
    pub client_latency: LatencyModel,
    #[serde(default = "default_poll")]
    pub poll_interval_ms: u64,
    #[serde(default = "default_ttl")]
    pub ttl_ms: u64,
    #[serde(default)]
    pub cache_mode: CacheMode,
    #[serde(default)]
    pub audit_policy: AuditPolicy,
    #[serde(default = "default_settle")]
    pub settle_delay_ms: u64,
    #[serde(default = "default_timeout")]
    pub node_timeout_ms: u64,
    #[serde(default)]
    pub workload: Vec<TimedAction>,
}

pub(crate) fn subject_names(subject: &str, count: u32) -> Vec<String> {
    if count == 1 {
        vec![subject.to_owned()]
    } else {
        (0..count).map(|k| format!("{subject}-{k}")).collect()
    }
}

/// Workload flattened to single-subject steps, ordered by time (stable).
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Step {
    Enroll(String),
    Auth { subject: String, impostor: bool },
    Revoke(String),
}

impl ScenarioConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, SimError> {
        let cfg: ScenarioConfig =
            serde_json::from_slice(bytes).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn quorum(&self) -> usize {
        self.quorum.unwrap_or_else(|| default_quorum(self.n_nodes))
    }

    pub fn node_latency(&self, node: usize) -> LatencyModel {
        self.link_latency
            .get(&crate::cluster::node_id(node))
            .copied()
            .unwrap_or(self.latency)
    }

    pub fn max_node_latency(&self) -> u64 {
        (0..self.n_nodes)
            .map(|i| self.node_latency(i).max_ms())
            .max()
            .unwrap_or(0)
    }

    /// Upper bound on any propagation window: poll + ttl + max link latency.
    pub fn window_bound_ms(&self) -> u64 {
        self.poll_interval_ms + self.ttl_ms + self.max_node_latency()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_nodes == 0 {
            return Err(config_err("n_nodes must be at least 1"));
        }
        let q = self.quorum();
        if q == 0 || q > self.n_nodes {
            return Err(config_err(format!(
                "quorum {q} out of range for {} nodes",
                self.n_nodes
            )));
        }
        self.latency.validate()?;
        self.client_latency.validate()?;
        for (k, m) in &self.link_latency {
            let known = (0..self.n_nodes).any(|i| crate::cluster::node_id(i) == *k);
            if !known {
                return Err(config_err(format!("link_latency names unknown node {k:?}")));
            }
            m.validate()?;
        }
        let mut enrolled = std::collections::BTreeSet::new();
        let mut revoked = std::collections::BTreeSet::new();
        for (t, step) in self.steps() {
            match step {
                Step::Enroll(s) => {
                    if !enrolled.insert(s.clone()) {
                        return Err(config_err(format!("subject {s:?} enrolled twice")));
                    }
                }
                Step::Auth { subject, .. } | Step::Revoke(subject)
                    if !enrolled.contains(&subject) =>
                {
                    return Err(config_err(format!(
                        "subject {subject:?} used at {t} ms before enrolment"
                    )));
                }
                Step::Revoke(subject) if !revoked.insert(subject.clone()) => {
                    return Err(config_err(format!("subject {subject:?} revoked twice")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub(crate) fn steps(&self) -> Vec<(u64, Step)> {
        let mut steps = Vec::new();
        for a in &self.workload {
            match &a.action {
                Action::Enroll { subject, count } => {
                    for s in subject_names(subject, *count) {
                        steps.push((a.at_ms, Step::Enroll(s)));
                    }
                }
                Action::Auth { subject, impostor } => steps.push((
                    a.at_ms,
                    Step::Auth {
                        subject: subject.clone(),
                        impostor: *impostor,
                    },
                )),
                Action::Revoke { subject } => steps.push((a.at_ms, Step::Revoke(subject.clone()))),
                Action::RevokeBurst {
                    subject,
                    count,
                    spacing_ms,
                } => {
                    for (k, s) in subject_names(subject, *count).into_iter().enumerate() {
                        steps.push((a.at_ms + k as u64 * spacing_ms, Step::Revoke(s)));
                    }
                }
            }
        }
        steps.sort_by_key(|(t, _)| *t);
        steps
    }

    pub fn last_action_ms(&self) -> u64 {
        self.steps().last().map(|(t, _)| *t).unwrap_or(0)
    }
}

/// Closed-loop load in virtual time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadConfig {
    pub seed: u64,
    #[serde(default = "default_nodes")]
    pub n_nodes: usize,
    #[serde(default)]
    pub quorum: Option<usize>,
    pub clients: usize,
    pub duration_ms: u64,
    #[serde(default)]
    pub think_time_ms: u64,
    /// One-way client to gateway hop.
    #[serde(default)]
    pub client_latency: LatencyModel,
    /// One-way gateway to node hop.
    #[serde(default)]
    pub node_latency: LatencyModel,
    /// Per-request processing time at the gateway (0 disables queueing).
    #[serde(default)]
    pub gateway_service_ms: u64,
    /// Per-task processing time at each node (0 disables queueing).
    #[serde(default)]
    pub node_service_ms: u64,
    #[serde(default = "default_timeout")]
    pub node_timeout_ms: u64,
}

impl LoadConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, SimError> {
        let cfg: LoadConfig =
            serde_json::from_slice(bytes).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn quorum(&self) -> usize {
        self.quorum.unwrap_or_else(|| default_quorum(self.n_nodes))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_nodes == 0 {
            return Err(config_err("n_nodes must be at least 1"));
        }
        let q = self.quorum();
        if q == 0 || q > self.n_nodes {
            return Err(config_err(format!(
                "quorum {q} out of range for {} nodes",
                self.n_nodes
            )));
        }
        if self.clients == 0 {
            return Err(config_err("clients must be at least 1"));
        }
        self.client_latency.validate()?;
        self.node_latency.validate()
    }

    /// End-to-end auth latency with no queueing and fixed hops:
    /// client hop in and out plus the slowest node round trip.
    pub fn analytic_auth_latency_ms(&self) -> Option<u64> {
        match (self.client_latency, self.node_latency) {
            (LatencyModel::Fixed { ms: c }, LatencyModel::Fixed { ms: n }) => {
                Some(2 * c + 2 * n + self.gateway_service_ms + self.node_service_ms)
            }
            _ => None,
        }
    }
}
