//! The simulated deployment: real gateway and node logic driven by an event
//! queue, with every message crossing a seeded-latency link.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::json;

use super::config::{LatencyModel, Step};
use super::engine::{EventQueue, Sampler};
use super::report::{AuthRecord, RevocationWindow, StaleAcceptance};
use crate::audit::{verify_log, AuditEvent, AuditEventType, AuditLog, AuditPolicy, LogStatus};
use crate::biometric::{make_profile, DEFAULT_NOISE_SIGMA, DEFAULT_THRESHOLD};
use crate::client::{
    build_auth_request, build_enrollment_with_id, capture_probe, ClientError, Wallet,
};
use crate::cluster::{node_id, node_keys};
use crate::credential::CredentialId;
use crate::gateway::{
    AuthRequest, Gateway, GatewayConfig, Outcome, PendingAuth, RegisteredNode, RevokeRequest,
};
use crate::identity::{generate_identity, seed_from_label, Did, KeyPair};
use crate::node::{VerifierNode, VerifyResult};
use crate::proof::{DeviceAttestation, ProofError};
use crate::trust::{
    reason, CacheMode, LedgerRead, LedgerView, MemoryStore, RevocationLedger, VisiblePrefix,
};

pub(crate) struct WorldParams {
    pub seed: u64,
    pub n_nodes: usize,
    pub quorum: usize,
    pub node_latency: Vec<LatencyModel>,
    pub client_latency: LatencyModel,
    pub poll_interval_ms: u64,
    pub ttl_ms: u64,
    pub cache_mode: CacheMode,
    pub audit: Option<(AuditPolicy, u64)>,
    pub node_timeout_ms: u64,
    pub gateway_service_ms: u64,
    pub node_service_ms: u64,
    /// Poll ticks are not scheduled past this time.
    pub tick_until: u64,
}

#[derive(Debug)]
enum Ev {
    Step(Step),
    ClientCycle {
        client: usize,
    },
    ChallengeArrive {
        auth: usize,
    },
    ChallengeReturn {
        auth: usize,
    },
    AuthArrive {
        auth: usize,
    },
    TaskArrive {
        auth: usize,
        node: usize,
    },
    TaskStart {
        auth: usize,
        node: usize,
    },
    VoteArrive {
        auth: usize,
        vote: Box<VerifyResult>,
    },
    AuthDeadline {
        auth: usize,
    },
    AuthReturn {
        auth: usize,
    },
    Visible {
        node: usize,
        height: u64,
    },
    PollTick {
        node: usize,
    },
    AuditArrive {
        node: usize,
        event: usize,
    },
    AuditFlush {
        node: usize,
    },
}

struct AuthState {
    subject: String,
    impostor: bool,
    client: Option<usize>,
    challenge: Option<[u8; 32]>,
    request: Option<AuthRequest>,
    pending: Option<PendingAuth>,
    votes: Vec<VerifyResult>,
    stale_votes: u32,
    revoked_at_send: bool,
    record: Option<AuthRecord>,
    sent_at: u64,
}

struct RevState {
    subject: String,
    credential_id: String,
    height: u64,
    committed_at: u64,
    caught_up: Vec<Option<u64>>,
}

pub(crate) struct LoadDriver {
    pub clients: usize,
    pub duration_ms: u64,
    pub think_time_ms: u64,
}

pub(crate) struct World {
    p: WorldParams,
    q: EventQueue<Ev>,
    sampler: Sampler,
    ledger: RevocationLedger,
    visible: Vec<u64>,
    nodes: Vec<VerifierNode>,
    gateway: Gateway,
    gateway_did: Did,
    issuer_did: Did,
    issuer_keys: KeyPair,
    wallets: BTreeMap<String, Wallet>,
    rng: ChaCha20Rng,
    auths: Vec<AuthState>,
    revs: Vec<RevState>,
    rev_ptr: Vec<usize>,
    stale: Vec<StaleAcceptance>,
    audit_logs: Vec<AuditLog>,
    audit_events: Vec<AuditEvent>,
    gateway_busy_until: u64,
    gateway_busy_total: u64,
    node_busy_until: Vec<u64>,
    node_busy_total: Vec<u64>,
    violations: Vec<String>,
    load: Option<LoadDriver>,
}

/// Everything a run produced.
pub(crate) struct Outputs {
    pub auths: Vec<AuthRecord>,
    pub revocations: Vec<RevocationWindow>,
    pub stale: Vec<StaleAcceptance>,
    pub audit_logs: Vec<AuditLog>,
    pub node_processed: Vec<u64>,
    pub node_busy_ms: Vec<u64>,
    pub gateway_busy_ms: u64,
    pub violations: Vec<String>,
    pub end_time: u64,
}

impl World {
    pub fn new(p: WorldParams) -> Self {
        let sampler = Sampler::new(p.seed);
        let store = Arc::new(MemoryStore::new());
        let ledger = RevocationLedger::new();
        let label = format!("sim-{}", p.seed);
        let nodes: Vec<VerifierNode> = (0..p.n_nodes)
            .map(|i| {
                // nodes start at staggered times so their poll ticks are out of phase
                let phase = sampler.below("phase", i as u64, p.poll_interval_ms.max(1));
                let view = LedgerView::fetch(
                    node_id(i),
                    &ledger,
                    phase,
                    p.poll_interval_ms,
                    p.ttl_ms,
                    p.cache_mode,
                );
                VerifierNode::new(node_id(i), node_keys(&label, i), store.clone(), view)
            })
            .collect();
        let registry = nodes
            .iter()
            .map(|n| RegisteredNode {
                node_id: n.node_id().to_owned(),
                public_key: n.public_key(),
            })
            .collect();
        let mut config = GatewayConfig::for_nodes(p.n_nodes);
        config.quorum = p.quorum;
        config.node_timeout_ms = p.node_timeout_ms;
        let gateway = Gateway::new(
            config,
            sampler.bytes32("mac-key", 0).to_vec(),
            registry,
            store,
            Some(sampler.bytes32("gateway", 0)),
        )
        .expect("quorum validated by config");
        let (gateway_did, _) = generate_identity(&sampler.bytes32("gateway-identity", 0));
        let (issuer_did, issuer_keys) = generate_identity(&sampler.bytes32("issuer", 0));
        let audit_logs = match p.audit {
            Some((policy, settle)) => (0..p.n_nodes)
                .map(|_| AuditLog::new(policy, settle))
                .collect(),
            None => Vec::new(),
        };
        let mut world = World {
            q: EventQueue::new(),
            rng: ChaCha20Rng::from_seed(sampler.bytes32("client-rng", 0)),
            sampler,
            ledger,
            visible: vec![0; p.n_nodes],
            gateway,
            gateway_did,
            issuer_did,
            issuer_keys,
            wallets: BTreeMap::new(),
            auths: Vec::new(),
            revs: Vec::new(),
            rev_ptr: vec![0; p.n_nodes],
            stale: Vec::new(),
            audit_logs,
            audit_events: Vec::new(),
            gateway_busy_until: 0,
            gateway_busy_total: 0,
            node_busy_until: vec![0; p.n_nodes],
            node_busy_total: vec![0; p.n_nodes],
            violations: Vec::new(),
            load: None,
            nodes,
            p,
        };
        if world.p.cache_mode == CacheMode::Polling && world.p.poll_interval_ms > 0 {
            for i in 0..world.p.n_nodes {
                let next = world.nodes[i].view().fetched_at + world.p.poll_interval_ms;
                if next <= world.p.tick_until {
                    world.q.at(next, Ev::PollTick { node: i });
                }
            }
        }
        world
    }

    pub fn schedule_steps(&mut self, steps: Vec<(u64, Step)>) {
        for (t, s) in steps {
            self.q.at(t, Ev::Step(s));
        }
    }

    pub fn start_load(&mut self, driver: LoadDriver) {
        for c in 0..driver.clients {
            self.enroll(&format!("client-{c}"), 0);
        }
        for c in 0..driver.clients {
            self.q.at(0, Ev::ClientCycle { client: c });
        }
        self.load = Some(driver);
    }

    pub fn run(mut self) -> Outputs {
        while let Some((now, ev)) = self.q.pop() {
            self.handle(now, ev);
        }
        self.finish()
    }

    fn node_link(&self, node: usize, purpose: &str, key: u64) -> u64 {
        self.sampler
            .latency(self.p.node_latency[node], purpose, key, node as u64)
    }

    fn client_link(&self, auth: usize, hop: u64) -> u64 {
        self.sampler
            .latency(self.p.client_latency, "client", auth as u64 * 4 + hop, 0)
    }

    fn gateway_slot(&mut self, arrive: u64) -> u64 {
        let start = arrive.max(self.gateway_busy_until);
        self.gateway_busy_until = start + self.p.gateway_service_ms;
        self.gateway_busy_total += self.p.gateway_service_ms;
        self.gateway_busy_until
    }

    fn handle(&mut self, now: u64, ev: Ev) {
        match ev {
            Ev::Step(Step::Enroll(s)) => self.enroll(&s, now),
            Ev::Step(Step::Auth { subject, impostor }) => {
                self.start_auth(subject, impostor, None, now)
            }
            Ev::Step(Step::Revoke(s)) => self.revoke(&s, now),
            Ev::ClientCycle { client } => {
                self.start_auth(format!("client-{client}"), false, Some(client), now)
            }
            Ev::ChallengeArrive { auth } => self.challenge_arrive(auth, now),
            Ev::ChallengeReturn { auth } => self.challenge_return(auth, now),
            Ev::AuthArrive { auth } => self.auth_arrive(auth, now),
            Ev::TaskArrive { auth, node } => {
                let start = now.max(self.node_busy_until[node]);
                self.node_busy_until[node] = start + self.p.node_service_ms;
                self.node_busy_total[node] += self.p.node_service_ms;
                if start == now {
                    self.task_start(auth, node, now);
                } else {
                    self.q.at(start, Ev::TaskStart { auth, node });
                }
            }
            Ev::TaskStart { auth, node } => self.task_start(auth, node, now),
            Ev::VoteArrive { auth, vote } => {
                let a = &mut self.auths[auth];
                if a.record.is_none() {
                    a.votes.push(*vote);
                    if a.votes.len() == self.p.n_nodes {
                        self.decide(auth, now);
                    }
                }
            }
            Ev::AuthDeadline { auth } => {
                if self.auths[auth].record.is_none() {
                    self.decide(auth, now);
                }
            }
            Ev::AuthReturn { auth } => {
                let a = &mut self.auths[auth];
                let rec = a.record.as_mut().expect("decided before return");
                rec.completed_at = now;
                rec.latency_ms = now - rec.sent_at;
                if let (Some(client), Some(load)) = (a.client, &self.load) {
                    let next = now + load.think_time_ms;
                    if next < load.duration_ms {
                        self.q.at(next, Ev::ClientCycle { client });
                    }
                }
            }
            Ev::Visible { node, height } => {
                self.visible[node] = self.visible[node].max(height);
                let prefix = VisiblePrefix {
                    ledger: &self.ledger,
                    height: self.visible[node],
                };
                match self.p.cache_mode {
                    CacheMode::EventDriven => {
                        self.nodes[node].notify(&prefix, now);
                    }
                    // a zero poll interval means the node re-reads continuously
                    CacheMode::Polling if self.p.poll_interval_ms == 0 => {
                        self.nodes[node].poll(&prefix, now);
                    }
                    CacheMode::Polling => {}
                }
                self.observe(node, now);
            }
            Ev::PollTick { node } => {
                let prefix = VisiblePrefix {
                    ledger: &self.ledger,
                    height: self.visible[node],
                };
                self.nodes[node].poll(&prefix, now);
                self.observe(node, now);
                let next = self.nodes[node].view().fetched_at + self.p.poll_interval_ms;
                if next <= self.p.tick_until {
                    self.q.at(next.max(now + 1), Ev::PollTick { node });
                }
            }
            Ev::AuditArrive { node, event } => {
                let ev = self.audit_events[event].clone();
                self.audit_logs[node].append_event(ev, now);
                if let Some(due) = self.audit_logs[node].next_due() {
                    self.q.at(due, Ev::AuditFlush { node });
                }
            }
            Ev::AuditFlush { node } => {
                self.audit_logs[node].flush_due(now);
                if let Some(due) = self.audit_logs[node].next_due() {
                    if due > now {
                        self.q.at(due, Ev::AuditFlush { node });
                    }
                }
            }
        }
    }

    fn wallet_seeds(&self, subject: &str) -> ([u8; 32], [u8; 32], [u8; 32]) {
        let tag = |kind: &str| seed_from_label(&format!("{}/{kind}/{subject}", self.p.seed));
        (tag("identity"), tag("face"), tag("template-key"))
    }

    fn enroll(&mut self, subject: &str, now: u64) {
        let (seed, face, key) = self.wallet_seeds(subject);
        let mut wallet =
            Wallet::create(seed, face, key, &mut self.rng).expect("32-byte template key");
        let id = CredentialId::derive_with_counter(
            &self.issuer_did,
            &wallet.did,
            now,
            self.wallets.len() as u64,
        );
        let req = build_enrollment_with_id(
            id,
            &wallet.did,
            &self.issuer_keys,
            &self.issuer_did,
            BTreeMap::new(),
            BTreeMap::new(),
            now,
        )
        .expect("no biometric attributes");
        match self.gateway.handle_enroll(&req) {
            Ok(resp) => {
                self.broadcast(
                    AuditEventType::Enroll,
                    json!({ "credential_id": resp.credential.credential_id.to_string() }),
                    now,
                );
                wallet.credential = Some(resp.credential);
                self.wallets.insert(subject.to_owned(), wallet);
            }
            Err(e) => self
                .violations
                .push(format!("enrolment of {subject} failed: {e}")),
        }
    }

    fn revoke(&mut self, subject: &str, now: u64) {
        let cred = self.wallets[subject].credential.clone().expect("enrolled");
        let req = RevokeRequest::sign(
            cred.credential_id,
            cred.metadata_cid,
            reason::KEY_COMPROMISE,
            &self.issuer_keys,
        );
        if let Err(e) = self.gateway.authorize_revoke(&req) {
            self.violations
                .push(format!("revocation of {subject} refused: {e}"));
            return;
        }
        let block = match self
            .ledger
            .append_revocation(cred.credential_id, req.reason, now)
        {
            Ok(b) => b,
            Err(e) => {
                self.violations
                    .push(format!("revocation of {subject} failed: {e}"));
                return;
            }
        };
        let height = block.index + 1;
        self.revs.push(RevState {
            subject: subject.to_owned(),
            credential_id: cred.credential_id.to_string(),
            height,
            committed_at: now,
            caught_up: vec![None; self.p.n_nodes],
        });
        for node in 0..self.p.n_nodes {
            let delay = self.node_link(node, "visibility", height);
            self.q.at(now + delay, Ev::Visible { node, height });
        }
        self.broadcast(
            AuditEventType::Revoke,
            json!({ "credential_id": cred.credential_id.to_string(), "height": height }),
            now,
        );
    }

    fn broadcast(&mut self, event_type: AuditEventType, payload: serde_json::Value, now: u64) {
        if self.audit_logs.is_empty() {
            return;
        }
        let idx = self.audit_events.len();
        let mut event_id = [0u8; 16];
        event_id.copy_from_slice(&self.sampler.bytes32("audit-id", idx as u64)[..16]);
        self.audit_events.push(AuditEvent {
            event_type,
            actor_did: self.gateway_did.clone(),
            payload,
            event_time: now,
            event_id,
        });
        for node in 0..self.p.n_nodes {
            let delay = self.node_link(node, "audit", idx as u64);
            self.q.at(now + delay, Ev::AuditArrive { node, event: idx });
        }
    }

    fn start_auth(&mut self, subject: String, impostor: bool, client: Option<usize>, now: u64) {
        let auth = self.auths.len();
        self.auths.push(AuthState {
            subject,
            impostor,
            client,
            challenge: None,
            request: None,
            pending: None,
            votes: Vec::new(),
            stale_votes: 0,
            revoked_at_send: false,
            record: None,
            sent_at: now,
        });
        let delay = self.client_link(auth, 0);
        self.q.at(now + delay, Ev::ChallengeArrive { auth });
    }

    fn challenge_arrive(&mut self, auth: usize, now: u64) {
        let finish = self.gateway_slot(now);
        let did = self.wallets[&self.auths[auth].subject].did.clone();
        let back = finish + self.client_link(auth, 1);
        match self.gateway.issue_challenge(&did, now) {
            Ok(ch) => {
                self.auths[auth].challenge = Some(ch.challenge);
                self.q.at(back, Ev::ChallengeReturn { auth });
            }
            Err(e) => {
                self.reject_locally(auth, now, e.code());
                self.q.at(back, Ev::AuthReturn { auth });
            }
        }
    }

    fn challenge_return(&mut self, auth: usize, now: u64) {
        let a = &self.auths[auth];
        let wallet = &self.wallets[&a.subject];
        let presenter = if a.impostor {
            make_profile(&seed_from_label(&format!(
                "{}/impostor/{}",
                self.p.seed, a.subject
            )))
        } else {
            wallet.profile()
        };
        let probe = capture_probe(
            &presenter,
            DEFAULT_NOISE_SIGMA,
            &self.sampler.bytes32("probe", auth as u64),
        )
        .expect("valid noise");
        let built = build_auth_request(
            wallet,
            &probe,
            DEFAULT_THRESHOLD,
            &DeviceAttestation::trusted(),
            a.challenge.expect("challenge issued"),
            self.ledger.height(),
            &mut self.rng,
        );
        self.auths[auth].sent_at = now;
        match built {
            Ok((req, _)) => {
                self.auths[auth].request = Some(req);
                let delay = self.client_link(auth, 2);
                self.q.at(now + delay, Ev::AuthArrive { auth });
            }
            Err(ClientError::Proof(ProofError::MatchRejected)) => {
                self.reject_locally(auth, now, "match_rejected");
                self.q.at(now, Ev::AuthReturn { auth });
            }
            Err(e) => {
                self.violations
                    .push(format!("auth {auth}: client failure {e}"));
                self.reject_locally(auth, now, "client_error");
                self.q.at(now, Ev::AuthReturn { auth });
            }
        }
    }

    fn auth_arrive(&mut self, auth: usize, now: u64) {
        let finish = self.gateway_slot(now);
        let req = self.auths[auth].request.clone().expect("request built");
        self.auths[auth].revoked_at_send = self
            .ledger
            .revoked_height(&req.proof.credential_id)
            .is_some();
        match self.gateway.begin_auth(&req, now) {
            Ok(pending) => {
                for node in 0..self.p.n_nodes {
                    let delay = self.node_link(node, "task", auth as u64);
                    self.q.at(finish + delay, Ev::TaskArrive { auth, node });
                }
                self.q
                    .at(finish + self.p.node_timeout_ms, Ev::AuthDeadline { auth });
                self.auths[auth].pending = Some(pending);
            }
            Err(e) => {
                self.reject_locally(auth, now, e.code());
                let back = finish + self.client_link(auth, 3);
                self.q.at(back, Ev::AuthReturn { auth });
            }
        }
    }

    fn task_start(&mut self, auth: usize, node: usize, now: u64) {
        let task = self.auths[auth]
            .pending
            .as_ref()
            .expect("fanned out")
            .task
            .clone();
        let prefix = VisiblePrefix {
            ledger: &self.ledger,
            height: self.visible[node],
        };
        let result = self.nodes[node].handle_verify_task(&task, &prefix, now);
        self.observe(node, now);
        if result.vote.is_accept() {
            if let Some(h) = self.ledger.revoked_height(&task.proof.credential_id) {
                // committed at or before now, since the ledger only holds the past
                self.auths[auth].stale_votes += 1;
                self.stale.push(StaleAcceptance {
                    auth,
                    node: node_id(node),
                    at: now,
                    view_height: result.as_of_height,
                    revocation_height: h,
                });
                if result.as_of_height >= h {
                    self.violations.push(format!(
                        "node {node} accepted at height {} >= revocation height {h}",
                        result.as_of_height
                    ));
                }
            }
        }
        let delay = self.p.node_service_ms + self.node_link(node, "vote", auth as u64);
        self.q.at(
            now + delay,
            Ev::VoteArrive {
                auth,
                vote: Box::new(result),
            },
        );
    }

    fn decide(&mut self, auth: usize, now: u64) {
        let a = &mut self.auths[auth];
        let pending = a.pending.as_ref().expect("fanned out");
        let resp = self
            .gateway
            .complete_auth(pending, std::mem::take(&mut a.votes), now);
        let d = resp.decision;
        a.record = Some(AuthRecord {
            index: auth,
            subject: a.subject.clone(),
            impostor: a.impostor,
            sent_at: a.sent_at,
            decided_at: now,
            completed_at: 0,
            latency_ms: 0,
            outcome: d.outcome,
            reason: d.reason.clone(),
            accept_votes: d.accept_votes,
            missing_votes: d.missing_votes,
            stale_votes: a.stale_votes,
            revoked_at_send: a.revoked_at_send,
        });
        let event_type = if d.accepted() {
            AuditEventType::AuthAccept
        } else {
            AuditEventType::AuthReject
        };
        self.broadcast(
            event_type,
            json!({ "auth": auth, "accept_votes": d.accept_votes }),
            now,
        );
        let back = now + self.client_link(auth, 3);
        self.q.at(back, Ev::AuthReturn { auth });
    }

    fn reject_locally(&mut self, auth: usize, now: u64, reason: &str) {
        let a = &mut self.auths[auth];
        a.record = Some(AuthRecord {
            index: auth,
            subject: a.subject.clone(),
            impostor: a.impostor,
            sent_at: a.sent_at,
            decided_at: now,
            completed_at: 0,
            latency_ms: 0,
            outcome: Outcome::Reject,
            reason: Some(reason.to_owned()),
            accept_votes: 0,
            missing_votes: self.p.n_nodes,
            stale_votes: 0,
            revoked_at_send: a.revoked_at_send,
        });
    }

    fn observe(&mut self, node: usize, now: u64) {
        let height = self.nodes[node].view().as_of_height;
        while let Some(rev) = self.revs.get_mut(self.rev_ptr[node]) {
            if height < rev.height {
                break;
            }
            rev.caught_up[node] = Some(now);
            self.rev_ptr[node] += 1;
        }
    }

    fn finish(mut self) -> Outputs {
        let end_time = self.q.now();
        for (i, log) in self.audit_logs.iter_mut().enumerate() {
            if log.pending() > 0 {
                self.violations
                    .push(format!("node {i} audit log has unflushed events"));
                log.flush_all();
            }
            if verify_log(log.entries()) != LogStatus::Ok {
                self.violations
                    .push(format!("node {i} audit log fails verification"));
            }
        }
        let revocations = self
            .revs
            .into_iter()
            .map(|r| {
                let window_ms = r
                    .caught_up
                    .iter()
                    .try_fold(0u64, |acc, c| c.map(|t| acc.max(t - r.committed_at)));
                if window_ms.is_none() {
                    self.violations.push(format!(
                        "revocation of {} never reached every node",
                        r.subject
                    ));
                }
                RevocationWindow {
                    subject: r.subject,
                    credential_id: r.credential_id,
                    height: r.height,
                    committed_at: r.committed_at,
                    node_caught_up: r.caught_up,
                    window_ms,
                }
            })
            .collect();
        let auths = self.auths.into_iter().filter_map(|a| a.record).collect();
        Outputs {
            auths,
            revocations,
            stale: self.stale,
            node_processed: self.nodes.iter().map(|n| n.status().processed).collect(),
            node_busy_ms: self.node_busy_total,
            gateway_busy_ms: self.gateway_busy_total,
            audit_logs: self.audit_logs,
            violations: self.violations,
            end_time,
        }
    }
}
