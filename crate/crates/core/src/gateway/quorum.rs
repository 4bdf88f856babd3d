//! Fail-closed quorum aggregation of verifier votes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::node::VerifyResult;
use crate::proof::RejectReason;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("quorum {quorum} out of range for {n_nodes} nodes")]
pub struct QuorumConfigError {
    pub quorum: usize,
    pub n_nodes: usize,
}

/// Smallest quorum with no unilateral accept: a strict majority.
pub fn default_quorum(n_nodes: usize) -> usize {
    n_nodes / 2 + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub outcome: Outcome,
    pub votes: Vec<VerifyResult>,
    pub quorum: usize,
    pub n_nodes: usize,
    pub accept_votes: usize,
    /// Nodes that produced no counted vote (timeout, bad signature, unknown).
    pub missing_votes: usize,
    /// Set when a single node can decide alone.
    pub unilateral: bool,
    pub reason: Option<String>,
}

impl Decision {
    pub fn accepted(&self) -> bool {
        self.outcome == Outcome::Accept
    }
}

/// Aggregate the votes that arrived. Missing votes count as rejections.
/// Only the first vote from each node id is counted.
pub fn aggregate(
    votes: Vec<VerifyResult>,
    quorum: usize,
    n_nodes: usize,
) -> Result<Decision, QuorumConfigError> {
    if quorum == 0 || quorum > n_nodes {
        return Err(QuorumConfigError { quorum, n_nodes });
    }
    let mut seen = BTreeSet::new();
    let counted: Vec<VerifyResult> = votes
        .into_iter()
        .filter(|v| seen.insert(v.node_id.clone()))
        .collect();
    let accept_votes = counted.iter().filter(|v| v.vote.is_accept()).count();
    let missing_votes = n_nodes.saturating_sub(counted.len());
    let outcome = if accept_votes >= quorum {
        Outcome::Accept
    } else {
        Outcome::Reject
    };
    let reason = (outcome == Outcome::Reject).then(|| dominant_reason(&counted));
    Ok(Decision {
        outcome,
        votes: counted,
        quorum,
        n_nodes,
        accept_votes,
        missing_votes,
        unilateral: quorum == 1,
        reason,
    })
}

fn dominant_reason(votes: &[VerifyResult]) -> String {
    let mut counts: BTreeMap<RejectReason, usize> = BTreeMap::new();
    for v in votes {
        if let crate::proof::Verdict::Reject(r) = v.vote {
            *counts.entry(r).or_insert(0) += 1;
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(r, _)| r.as_str().to_owned())
        .unwrap_or_else(|| "timeout".to_owned())
}
