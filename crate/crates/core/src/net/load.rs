//! Real-mode deployment on one machine: spawn node and gateway processes,
//! drive closed-loop clients over the wire, and report latency percentiles.

use std::fs;
use std::io;
use std::net::{SocketAddr, TcpListener};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use super::client::Connection;
use super::config::DeployConfig;
use super::wire::WireError;
use crate::biometric::{DEFAULT_NOISE_SIGMA, DEFAULT_THRESHOLD};
use crate::client::{build_auth_request, build_enrollment, capture_probe, ClientError, Wallet};
use crate::gateway::Outcome;
use crate::identity::{generate_identity, seed_from_label};
use crate::proof::DeviceAttestation;
use crate::sim::{LatencyReport, LatencySample};

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("wire: {0}")]
    Wire(#[from] WireError),
    #[error("client: {0}")]
    Client(#[from] ClientError),
    #[error("{0}")]
    Setup(String),
}

fn free_port() -> io::Result<SocketAddr> {
    TcpListener::bind("127.0.0.1:0")?.local_addr()
}

/// Gateway and node processes started from the `bioid` binary.
pub struct LocalCluster {
    children: Vec<Child>,
    pub gateway: SocketAddr,
    pub nodes: Vec<SocketAddr>,
    pub config_path: PathBuf,
    pub config: DeployConfig,
}

impl LocalCluster {
    /// Start `cfg.n_nodes()` nodes and a gateway on fresh local ports.
    pub fn spawn(exe: &Path, cfg: &DeployConfig) -> Result<Self, LoadError> {
        let mut cfg = cfg.clone();
        cfg.gateway.listen = free_port()?;
        for addr in cfg.nodes.listen.iter_mut() {
            *addr = free_port()?;
        }
        fs::create_dir_all(cfg.data_dir.join("logs"))?;
        let config_path = cfg.data_dir.join("deploy.toml");
        fs::write(&config_path, cfg.to_toml())?;
        let mut cluster = LocalCluster {
            children: Vec::new(),
            gateway: cfg.gateway.listen,
            nodes: cfg.nodes.listen.clone(),
            config_path,
            config: cfg,
        };
        for i in 0..cluster.nodes.len() {
            let index = i.to_string();
            cluster.start(
                exe,
                &format!("node-{i}"),
                &["node", "run", "--index", &index],
            )?;
        }
        cluster.start(exe, "gateway", &["gateway", "run"])?;
        cluster.wait_ready(Duration::from_secs(30))?;
        Ok(cluster)
    }

    fn start(&mut self, exe: &Path, name: &str, args: &[&str]) -> Result<(), LoadError> {
        let log = fs::File::create(
            self.config
                .data_dir
                .join("logs")
                .join(format!("{name}.log")),
        )?;
        let child = Command::new(exe)
            .args(args)
            .arg("--config")
            .arg(&self.config_path)
            .stdin(Stdio::null())
            .stdout(log.try_clone()?)
            .stderr(log)
            .spawn()?;
        self.children.push(child);
        Ok(())
    }

    fn wait_ready(&mut self, limit: Duration) -> Result<(), LoadError> {
        let started = Instant::now();
        loop {
            let attempt = Connection::connect(self.gateway, Duration::from_millis(200))
                .and_then(|mut c| c.gateway_status());
            match attempt {
                Ok(s) if s.status.n_nodes == self.nodes.len() => return Ok(()),
                _ if started.elapsed() > limit => {
                    return Err(LoadError::Setup(format!(
                        "gateway at {} not ready after {limit:?}",
                        self.gateway
                    )))
                }
                _ => {}
            }
            for c in self.children.iter_mut() {
                if let Some(status) = c.try_wait()? {
                    return Err(LoadError::Setup(format!(
                        "service exited early with {status}"
                    )));
                }
            }
            thread::sleep(Duration::from_millis(50));
        }
    }

    /// CPU time consumed so far by each process, gateway last.
    pub fn cpu_ms(&self) -> Vec<u64> {
        self.children
            .iter()
            .map(|c| process_cpu_ms(c.id()).unwrap_or(0))
            .collect()
    }
}

impl Drop for LocalCluster {
    fn drop(&mut self) {
        for c in self.children.iter_mut() {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

/// User plus system CPU time of a process, from `/proc/<pid>/stat`.
pub fn process_cpu_ms(pid: u32) -> Option<u64> {
    let stat = fs::read_to_string(format!("/proc/{pid}/stat")).ok()?;
    // fields after the parenthesised command name start at field 3
    let rest = &stat[stat.rfind(')')? + 1..];
    let fields: Vec<&str> = rest.split_whitespace().collect();
    let utime: u64 = fields.get(11)?.parse().ok()?;
    let stime: u64 = fields.get(12)?.parse().ok()?;
    // USER_HZ is 100 on Linux
    Some((utime + stime) * 10)
}

struct ClientCtx {
    wallet: Wallet,
    name: String,
}

fn client_loop(
    ctx: ClientCtx,
    gateway: SocketAddr,
    epoch: u64,
    start: Instant,
    until: Instant,
    think: Duration,
    seed: [u8; 32],
) -> Result<Vec<LatencySample>, LoadError> {
    let mut rng = ChaCha20Rng::from_seed(seed);
    let mut conn = Connection::connect(gateway, Duration::from_secs(5))?;
    let profile = ctx.wallet.profile();
    let mut samples = Vec::new();
    let mut k = 0u64;
    while Instant::now() < until {
        let ch = match conn.challenge(&ctx.wallet.did) {
            Ok(ch) => ch,
            Err(WireError::Remote(e)) if e.code == "rate_limited" => {
                thread::sleep(Duration::from_millis(100));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let probe_seed = seed_from_label(&format!("{}/probe/{k}", ctx.name));
        k += 1;
        let probe = capture_probe(&profile, DEFAULT_NOISE_SIGMA, &probe_seed)?;
        let (req, _) = build_auth_request(
            &ctx.wallet,
            &probe,
            DEFAULT_THRESHOLD,
            &DeviceAttestation::trusted(),
            ch.challenge,
            epoch,
            &mut rng,
        )?;
        let sent = Instant::now();
        let resp = conn.auth(&req);
        let latency_ms = sent.elapsed().as_millis() as u64;
        let accepted = match resp {
            Ok(r) => r.decision.outcome == Outcome::Accept,
            Err(WireError::Remote(_)) => false,
            Err(e) => return Err(e.into()),
        };
        samples.push(LatencySample {
            client: ctx.name.clone(),
            sent_at: (sent - start).as_millis() as u64,
            latency_ms,
            accepted,
        });
        if !think.is_zero() {
            thread::sleep(think);
        }
    }
    Ok(samples)
}

/// Spawn a local deployment from `exe` and run the configured closed-loop
/// load against it.
pub fn run_real_load(exe: &Path, cfg: &DeployConfig) -> Result<LatencyReport, LoadError> {
    let cluster = LocalCluster::spawn(exe, cfg)?;
    let load = &cfg.load;
    let (issuer_did, issuer_keys) =
        generate_identity(&seed_from_label(&format!("load/{}/issuer", load.seed)));
    let mut rng = ChaCha20Rng::from_seed(seed_from_label(&format!("load/{}/rng", load.seed)));
    let mut conn = Connection::connect(cluster.gateway, Duration::from_secs(5))?;
    let epoch = conn.gateway_status()?.ledger_height;
    let mut clients = Vec::new();
    for c in 0..load.clients {
        let name = format!("client-{c}");
        let tag = |kind: &str| seed_from_label(&format!("load/{}/{kind}/{name}", load.seed));
        let mut wallet =
            Wallet::create(tag("identity"), tag("face"), tag("template-key"), &mut rng)?;
        let req = build_enrollment(
            &wallet.did,
            &issuer_keys,
            &issuer_did,
            Default::default(),
            Default::default(),
            super::server::now_ms(),
        )?;
        wallet.credential = Some(conn.enroll(&req)?.credential);
        clients.push(ClientCtx { wallet, name });
    }
    drop(conn);

    let cpu_before = cluster.cpu_ms();
    let barrier = Arc::new(Barrier::new(clients.len() + 1));
    let think = Duration::from_millis(load.think_time_ms);
    let handles: Vec<_> = clients
        .into_iter()
        .enumerate()
        .map(|(i, ctx)| {
            let barrier = barrier.clone();
            let gateway = cluster.gateway;
            let duration = Duration::from_millis(load.duration_ms);
            let seed = seed_from_label(&format!("load/{}/client-rng/{i}", load.seed));
            thread::spawn(move || {
                barrier.wait();
                let start = Instant::now();
                client_loop(ctx, gateway, epoch, start, start + duration, think, seed)
            })
        })
        .collect();
    barrier.wait();
    let wall = Instant::now();
    let mut samples = Vec::new();
    for h in handles {
        let s = h
            .join()
            .map_err(|_| LoadError::Setup("client thread panicked".into()))??;
        samples.extend(s);
    }
    let elapsed_ms = wall.elapsed().as_millis() as u64;
    let cpu_after = cluster.cpu_ms();
    let cpu: Vec<u64> = cpu_after
        .iter()
        .zip(&cpu_before)
        .map(|(a, b)| a.saturating_sub(*b))
        .collect();

    let mut node_processed = Vec::new();
    for &addr in &cluster.nodes {
        let mut c = Connection::connect(addr, Duration::from_secs(5))?;
        node_processed.push(c.node_status()?.processed);
    }
    samples.sort_by(|a, b| (a.sent_at, &a.client).cmp(&(b.sent_at, &b.client)));
    let (gateway_cpu, node_cpu) = cpu
        .split_last()
        .map(|(g, n)| (*g, n.to_vec()))
        .unwrap_or_default();
    let mut report = LatencyReport::from_samples(
        samples,
        load.duration_ms,
        node_processed,
        gateway_cpu,
        node_cpu,
    );
    report.cpu_percent = cpu
        .iter()
        .map(|ms| {
            if elapsed_ms == 0 {
                0.0
            } else {
                *ms as f64 * 100.0 / elapsed_ms as f64
            }
        })
        .collect();
    Ok(report)
}
