//! Gateway and verifier-node TCP services. One thread per connection.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, RngExt};
use serde_json::json;

use super::client::Connection;
use super::config::DeployConfig;
use super::wire::{
    read_frame, write_frame, ChallengeReq, Envelope, GatewayStatusBody, MessageType, RevokeResp,
    WireError,
};
use crate::audit::{import_entries, AuditEvent, AuditEventType, AuditLog};
use crate::cluster::{node_id, node_keys};
use crate::gateway::{
    AuthRequest, EnrollRequest, Gateway, GatewayError, RegisteredNode, RevokeRequest,
};
use crate::identity::Did;
use crate::node::{VerifierNode, VerifyResult, VerifyTask};
use crate::sim::LatencyModel;
use crate::trust::{BlobStore, CacheMode, FsLedger, FsStore, LedgerRead, LedgerView, LedgerWrite};

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Sleep for one draw of an injected one-way delay.
pub fn inject_delay(model: LatencyModel) {
    let ms = match model {
        LatencyModel::Fixed { ms } => ms,
        LatencyModel::Uniform { min_ms, max_ms } => rand::rng().random_range(min_ms..=max_ms),
    };
    if ms > 0 {
        thread::sleep(Duration::from_millis(ms));
    }
}

pub(crate) fn open_shared(cfg: &DeployConfig) -> io::Result<(Arc<FsStore>, FsLedger)> {
    fs::create_dir_all(&cfg.data_dir)?;
    Ok((
        Arc::new(FsStore::open(cfg.store_path())?),
        FsLedger::open(cfg.ledger_path())?,
    ))
}

fn serve<F>(listener: TcpListener, handler: F)
where
    F: Fn(Envelope) -> Envelope + Send + Sync + 'static,
{
    let handler = Arc::new(handler);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let handler = handler.clone();
            thread::spawn(move || {
                let _ = connection_loop(stream, handler.as_ref());
            });
        }
    });
}

fn connection_loop(
    mut stream: TcpStream,
    handler: &dyn Fn(Envelope) -> Envelope,
) -> Result<(), WireError> {
    stream.set_nodelay(true)?;
    loop {
        let env = match read_frame(&mut stream) {
            Ok(Some(env)) => env,
            Ok(None) => return Ok(()),
            Err(WireError::Io(e)) => return Err(WireError::Io(e)),
            Err(e) => {
                // the stream position is unknown after a bad frame
                let _ = write_frame(&mut stream, &Envelope::error(0, "bad_frame", e.to_string()));
                return Err(e);
            }
        };
        let reply = handler(env);
        write_frame(&mut stream, &reply)?;
    }
}

fn decode<T: serde::de::DeserializeOwned>(env: &Envelope) -> Result<T, Envelope> {
    serde_json::from_value(env.body.clone())
        .map_err(|e| Envelope::error(env.id, "bad_request", e.to_string()))
}

struct NodeState {
    node: VerifierNode,
    did: Did,
    ledger: FsLedger,
    hop: LatencyModel,
    audit: Mutex<(AuditLog, fs::File)>,
}

impl NodeState {
    fn record(&self, event_type: AuditEventType, payload: serde_json::Value) {
        let mut event_id = [0u8; 16];
        rand::rng().fill_bytes(&mut event_id);
        let event = AuditEvent {
            event_type,
            actor_did: self.did.clone(),
            payload,
            event_time: now_ms(),
            event_id,
        };
        let mut guard = self.audit.lock().expect("audit lock");
        let (log, file) = &mut *guard;
        for entry in log.append_event(event, now_ms()) {
            let mut line = entry.to_line();
            line.push(b'\n');
            let _ = file.write_all(&line);
        }
    }

    fn refresh(&self, mode: CacheMode) {
        let before = self.node.view().as_of_height;
        match mode {
            CacheMode::Polling => {
                self.node.poll(&self.ledger, now_ms());
            }
            CacheMode::EventDriven => {
                if self.ledger.height() > before {
                    self.node.notify(&self.ledger, now_ms());
                }
            }
        }
        let after = self.node.view().as_of_height;
        if after > before {
            self.record(
                AuditEventType::ViewRefresh,
                json!({ "from": before, "to": after }),
            );
        }
    }

    fn handle(&self, env: Envelope) -> Envelope {
        match env.kind {
            MessageType::VerifyTask => {
                let task: VerifyTask = match decode(&env) {
                    Ok(t) => t,
                    Err(e) => return e,
                };
                inject_delay(self.hop);
                let result = self.node.handle_verify_task(&task, &self.ledger, now_ms());
                let event_type = if result.vote.is_accept() {
                    AuditEventType::AuthAccept
                } else {
                    AuditEventType::AuthReject
                };
                self.record(
                    event_type,
                    json!({ "task_id": task.task_id, "credential_id": task.proof.credential_id.to_string() }),
                );
                inject_delay(self.hop);
                Envelope::new(MessageType::VerifyResult, env.id, &result)
            }
            MessageType::StatusReq => {
                Envelope::new(MessageType::StatusResp, env.id, &self.node.status())
            }
            other => Envelope::error(
                env.id,
                "unexpected_type",
                format!("{other:?} not handled by nodes"),
            ),
        }
    }
}

/// Bind node `index` and serve in background threads.
pub fn start_node(cfg: &DeployConfig, index: usize) -> io::Result<SocketAddr> {
    let addr = *cfg.nodes.listen.get(index).ok_or_else(|| {
        io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("no node {index} in config"),
        )
    })?;
    let listener = TcpListener::bind(addr)?;
    let bound = listener.local_addr()?;
    let (store, ledger) = open_shared(cfg)?;
    let id = node_id(index);
    let keys = node_keys(&cfg.cluster_label, index);
    let did = Did::from_public_key(&keys.public_key());
    let view = LedgerView::fetch(
        id.clone(),
        &ledger,
        now_ms(),
        cfg.nodes.poll_interval_ms,
        cfg.nodes.ttl_ms,
        cfg.nodes.cache_mode,
    );
    let audit_path = cfg.audit_path(&id);
    if let Some(parent) = audit_path.parent() {
        fs::create_dir_all(parent)?;
    }
    // a restarted node extends its existing chain instead of starting a second genesis
    let previous = match fs::read(&audit_path) {
        Ok(data) => import_entries(&data).map_err(|(line, e)| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("audit line {line}: {e}"),
            )
        })?,
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e),
    };
    let audit_log = AuditLog::resume(cfg.audit_policy, 0, previous).map_err(|status| {
        io::Error::new(
            io::ErrorKind::InvalidData,
            format!("audit log broken: {status:?}"),
        )
    })?;
    let audit_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&audit_path)?;
    let state = Arc::new(NodeState {
        node: VerifierNode::new(id, keys, store as Arc<dyn BlobStore>, view),
        did,
        ledger,
        hop: cfg.latency.node_hop,
        // a node logs its own events, so ordering needs no settle buffer
        audit: Mutex::new((audit_log, audit_file)),
    });
    let mode = cfg.nodes.cache_mode;
    let tick = match mode {
        CacheMode::Polling => (cfg.nodes.poll_interval_ms / 4).clamp(5, 100),
        CacheMode::EventDriven => 10,
    };
    let refresher = state.clone();
    thread::spawn(move || loop {
        refresher.refresh(mode);
        thread::sleep(Duration::from_millis(tick));
    });
    serve(listener, move |env| state.handle(env));
    Ok(bound)
}

struct GatewayState {
    gateway: Gateway,
    ledger: FsLedger,
    node_addrs: Vec<SocketAddr>,
    hop: LatencyModel,
}

fn ask_node(
    addr: SocketAddr,
    task: &VerifyTask,
    deadline: Instant,
) -> Result<VerifyResult, WireError> {
    let left = deadline.saturating_duration_since(Instant::now());
    if left.is_zero() {
        return Err(WireError::Io(io::ErrorKind::TimedOut.into()));
    }
    let mut conn = Connection::connect(addr, left)?;
    conn.set_read_timeout(Some(left))?;
    conn.call(MessageType::VerifyTask, task, MessageType::VerifyResult)
}

impl GatewayState {
    fn fan_out(&self, task: &VerifyTask) -> Vec<VerifyResult> {
        let budget = task.deadline.saturating_sub(now_ms());
        let deadline = Instant::now() + Duration::from_millis(budget);
        let (tx, rx) = mpsc::channel();
        for &addr in &self.node_addrs {
            let tx = tx.clone();
            let task = task.clone();
            thread::spawn(move || {
                if let Ok(r) = ask_node(addr, &task, deadline) {
                    let _ = tx.send(r);
                }
            });
        }
        drop(tx);
        let mut votes = Vec::new();
        while votes.len() < self.node_addrs.len() {
            let left = deadline.saturating_duration_since(Instant::now());
            match rx.recv_timeout(left) {
                Ok(v) => votes.push(v),
                Err(_) => break,
            }
        }
        votes
    }

    fn handle(&self, env: Envelope) -> Envelope {
        inject_delay(self.hop);
        let reply = self.dispatch(&env);
        inject_delay(self.hop);
        reply
    }

    fn dispatch(&self, env: &Envelope) -> Envelope {
        let fail = |e: GatewayError| Envelope::error(env.id, e.code(), e.to_string());
        match env.kind {
            MessageType::EnrollReq => {
                let req: EnrollRequest = match decode(env) {
                    Ok(r) => r,
                    Err(e) => return e,
                };
                match self.gateway.handle_enroll(&req) {
                    Ok(resp) => Envelope::new(MessageType::EnrollResp, env.id, &resp),
                    Err(e) => fail(e),
                }
            }
            MessageType::ChallengeReq => {
                let req: ChallengeReq = match decode(env) {
                    Ok(r) => r,
                    Err(e) => return e,
                };
                let did: Did = match req.subject_did.parse() {
                    Ok(d) => d,
                    Err(e) => return Envelope::error(env.id, "bad_request", format!("{e}")),
                };
                match self.gateway.issue_challenge(&did, now_ms()) {
                    Ok(ch) => Envelope::new(MessageType::ChallengeResp, env.id, &ch),
                    Err(e) => fail(e),
                }
            }
            MessageType::AuthReq => {
                let req: AuthRequest = match decode(env) {
                    Ok(r) => r,
                    Err(e) => return e,
                };
                match self
                    .gateway
                    .handle_auth(&req, now_ms(), |task, _| self.fan_out(task))
                {
                    Ok(resp) => Envelope::new(MessageType::AuthResp, env.id, &resp),
                    Err(e) => fail(e),
                }
            }
            MessageType::RevokeReq => {
                let req: RevokeRequest = match decode(env) {
                    Ok(r) => r,
                    Err(e) => return e,
                };
                if let Err(e) = self.gateway.authorize_revoke(&req) {
                    return fail(e);
                }
                match self
                    .ledger
                    .commit_revocation(req.credential_id, req.reason, now_ms())
                {
                    Ok(block) => Envelope::new(
                        MessageType::RevokeResp,
                        env.id,
                        &RevokeResp {
                            height: block.index + 1,
                            block_hash: block.block_hash,
                        },
                    ),
                    Err(e) => fail(GatewayError::Ledger(e)),
                }
            }
            MessageType::StatusReq => Envelope::new(
                MessageType::StatusResp,
                env.id,
                &GatewayStatusBody {
                    status: self.gateway.status(),
                    ledger_height: self.ledger.height(),
                },
            ),
            other => Envelope::error(
                env.id,
                "unexpected_type",
                format!("{other:?} not handled by the gateway"),
            ),
        }
    }
}

/// Register every configured node (retrying until `wait` elapses), then bind
/// the gateway and serve in background threads.
pub fn start_gateway(cfg: &DeployConfig, wait: Duration) -> io::Result<SocketAddr> {
    let started = Instant::now();
    let mut registry = Vec::new();
    for &addr in &cfg.nodes.listen {
        let status = loop {
            let attempt = Connection::connect(addr, Duration::from_millis(500))
                .and_then(|mut c| c.node_status());
            match attempt {
                Ok(s) => break s,
                Err(e) if started.elapsed() >= wait => {
                    return Err(io::Error::new(
                        io::ErrorKind::TimedOut,
                        format!("node at {addr}: {e}"),
                    ))
                }
                Err(_) => thread::sleep(Duration::from_millis(50)),
            }
        };
        registry.push(RegisteredNode {
            node_id: status.node_id,
            public_key: status.public_key,
        });
    }
    let (store, ledger) = open_shared(cfg)?;
    let mac_key = cfg
        .mac_key()
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    let gateway = Gateway::new(cfg.gateway_config(), mac_key, registry, store, None)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    let listener = TcpListener::bind(cfg.gateway.listen)?;
    let bound = listener.local_addr()?;
    let state = Arc::new(GatewayState {
        gateway,
        ledger,
        node_addrs: cfg.nodes.listen.clone(),
        hop: cfg.latency.client_hop,
    });
    let pruner = state.clone();
    thread::spawn(move || loop {
        thread::sleep(Duration::from_secs(1));
        pruner.gateway.prune(now_ms());
    });
    serve(listener, move |env| state.handle(env));
    Ok(bound)
}
