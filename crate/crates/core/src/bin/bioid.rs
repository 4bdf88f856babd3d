//! `bioid`: wallets, enrolment, authentication, revocation, log tooling,
//! gateway and node processes, and harness runs.
//!
//! Exit codes: 0 success, 1 domain rejection (auth denied, broken chain,
//! failed suite row, runtime failure), 2 usage or configuration error.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::RngExt;
use serde::Serialize;

use bioid_core::audit::{compare_logs, import_entries, verify_log, AuditEntry, LogStatus};
use bioid_core::biometric::{make_profile, DEFAULT_NOISE_SIGMA, DEFAULT_THRESHOLD};
use bioid_core::client::{
    build_auth_request, build_enrollment, capture_probe, ClientError, IssuerKeys, Wallet,
};
use bioid_core::functional::{run_suite, Inject};
use bioid_core::gateway::{AuthResponse, RevokeRequest};
use bioid_core::identity::seed_from_label;
use bioid_core::net::wire::RevokeResp;
use bioid_core::net::{
    now_ms, open_local, run_real_load, start_gateway, start_node, Connection, DeployConfig,
    WireError,
};
use bioid_core::proof::{DeviceAttestation, ProofError};
use bioid_core::sim::{
    emit_report, run_load_sim, run_scenario, LoadConfig, Render, ReportFormat, ScenarioConfig,
};
use bioid_core::trust::{verify_chain, ChainStatus, RevocationLedger};

#[derive(Parser)]
#[command(
    name = "bioid",
    version,
    about = "Decentralised biometric identity toolkit"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Deployment configuration: a TOML file plus `--set key=value` overrides.
#[derive(Args)]
struct Deploy {
    /// Deployment config (TOML); defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set gateway.quorum=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Talk to a running gateway instead of the local data directory.
#[derive(Args)]
struct Target {
    #[arg(long, value_name = "ADDR")]
    gateway: Option<SocketAddr>,
    #[command(flatten)]
    deploy: Deploy,
}

#[derive(Args)]
struct Output {
    #[arg(long, default_value = "json")]
    format: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Create a wallet, or an issuer key with `--issuer`.
    Keygen {
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[arg(long)]
        issuer: bool,
        /// Derive keys from a label instead of OS randomness.
        #[arg(long)]
        label: Option<String>,
        /// Overwrite an existing file.
        #[arg(long)]
        force: bool,
    },
    /// Issue a credential for a wallet and register its metadata.
    Enroll {
        #[arg(long, value_name = "PATH")]
        wallet: PathBuf,
        #[arg(long, value_name = "PATH")]
        issuer: PathBuf,
        /// Non-biometric attribute, `name=value`.
        #[arg(long = "attr", value_name = "NAME=VALUE")]
        attrs: Vec<String>,
        #[command(flatten)]
        target: Target,
    },
    /// Request a fresh challenge from a running gateway.
    Challenge {
        #[arg(long, value_name = "PATH")]
        wallet: PathBuf,
        #[arg(long, value_name = "ADDR")]
        gateway: SocketAddr,
    },
    /// Capture a probe, prove the match, and authenticate.
    Auth {
        #[arg(long, value_name = "PATH")]
        wallet: PathBuf,
        /// Present a different face than the wallet owner's.
        #[arg(long)]
        impostor: bool,
        #[command(flatten)]
        target: Target,
    },
    /// Revoke the wallet's credential, signed by the issuer or the subject.
    Revoke {
        #[arg(long, value_name = "PATH")]
        wallet: PathBuf,
        /// Sign as this issuer instead of the subject.
        #[arg(long, value_name = "PATH")]
        issuer: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        reason: u16,
        #[command(flatten)]
        target: Target,
    },
    /// Revocation ledger tooling.
    Ledger {
        #[command(subcommand)]
        cmd: LedgerCmd,
    },
    /// Audit log tooling.
    Audit {
        #[command(subcommand)]
        cmd: AuditCmd,
    },
    /// Gateway process.
    Gateway {
        #[command(subcommand)]
        cmd: GatewayCmd,
    },
    /// Verifier node process.
    Node {
        #[command(subcommand)]
        cmd: NodeCmd,
    },
    /// Deterministic scenario runs.
    Sim {
        #[command(subcommand)]
        cmd: SimCmd,
    },
    /// Latency measurement.
    Load {
        #[command(subcommand)]
        cmd: LoadCmd,
    },
    /// Run the 12-case functional suite and print the category table.
    Suite {
        /// Enable a known defect: `legacy-expiry` or `naive-audit`.
        #[arg(long = "inject", value_name = "DEFECT")]
        inject: Vec<Inject>,
    },
}

#[derive(Subcommand)]
enum LedgerCmd {
    /// Check the revocation ledger's hash chain.
    Verify {
        /// Ledger export; defaults to the deployment's ledger.
        #[arg(long, value_name = "PATH")]
        file: Option<PathBuf>,
        #[command(flatten)]
        deploy: Deploy,
    },
}

#[derive(Subcommand)]
enum AuditCmd {
    /// Check one audit export's hash chain.
    Verify { file: PathBuf },
    /// Compare replicas of the audit log.
    Compare {
        #[arg(num_args = 2.., required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GatewayCmd {
    /// Register the configured nodes and serve until killed.
    Run {
        #[command(flatten)]
        deploy: Deploy,
        /// How long to wait for nodes to come up.
        #[arg(long, default_value_t = 30_000)]
        wait_ms: u64,
    },
}

#[derive(Subcommand)]
enum NodeCmd {
    /// Serve verifier node `index` until killed.
    Run {
        #[arg(long)]
        index: usize,
        #[command(flatten)]
        deploy: Deploy,
    },
}

#[derive(Subcommand)]
enum SimCmd {
    /// Run a scenario file in virtual time; exit 1 on any invariant violation.
    Run {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LoadMode {
    Sim,
    Real,
}

#[derive(Subcommand)]
enum LoadCmd {
    /// Closed-loop latency run: virtual time (`sim`, JSON config) or local
    /// processes (`real`, TOML deployment config).
    Run {
        #[arg(long, value_enum)]
        mode: LoadMode,
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[command(flatten)]
        output: Output,
    },
}

enum Fail {
    Usage(String),
    Rejected(String),
}

type Outcome = Result<(), Fail>;

fn usage(e: impl std::fmt::Display) -> Fail {
    Fail::Usage(e.to_string())
}

fn rejected(e: impl std::fmt::Display) -> Fail {
    Fail::Rejected(e.to_string())
}

fn from_wire(e: WireError) -> Fail {
    match e {
        WireError::Remote(b) => Fail::Rejected(format!("{}: {}", b.code, b.message)),
        other => Fail::Rejected(other.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Rejected(m)) => {
            eprintln!("rejected: {m}");
            ExitCode::from(1)
        }
        Err(Fail::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Cmd) -> Outcome {
    match cmd {
        Cmd::Keygen {
            out,
            issuer,
            label,
            force,
        } => keygen(&out, issuer, label.as_deref(), force),
        Cmd::Enroll {
            wallet,
            issuer,
            attrs,
            target,
        } => enroll(&wallet, &issuer, &attrs, &target),
        Cmd::Challenge { wallet, gateway } => {
            let w = load_wallet(&wallet)?;
            let mut conn = connect(gateway)?;
            print_json(&conn.challenge(&w.did).map_err(from_wire)?);
            Ok(())
        }
        Cmd::Auth {
            wallet,
            impostor,
            target,
        } => auth(&wallet, impostor, &target),
        Cmd::Revoke {
            wallet,
            issuer,
            reason,
            target,
        } => revoke(&wallet, issuer.as_deref(), reason, &target),
        Cmd::Ledger {
            cmd: LedgerCmd::Verify { file, deploy },
        } => {
            let path = match file {
                Some(f) => f,
                None => deploy_config(&deploy)?.ledger_path(),
            };
            let data =
                std::fs::read(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let blocks = RevocationLedger::import_blocks(&data).map_err(rejected)?;
            let status = verify_chain(&blocks);
            print_json(&serde_json::json!({ "blocks": blocks.len(), "chain": status }));
            match status {
                ChainStatus::Ok => Ok(()),
                ChainStatus::Broken { first_bad_index } => {
                    Err(rejected(format!("chain broken at block {first_bad_index}")))
                }
            }
        }
        Cmd::Audit {
            cmd: AuditCmd::Verify { file },
        } => {
            let entries = read_audit(&file)?;
            let status = verify_log(&entries);
            print_json(&serde_json::json!({ "entries": entries.len(), "log": status }));
            match status {
                LogStatus::Ok => Ok(()),
                LogStatus::Broken { first_bad_seq } => {
                    Err(rejected(format!("log broken at seq {first_bad_seq}")))
                }
            }
        }
        Cmd::Audit {
            cmd: AuditCmd::Compare { files },
        } => {
            let logs = files
                .iter()
                .map(|f| read_audit(f))
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&[AuditEntry]> = logs.iter().map(Vec::as_slice).collect();
            let report = compare_logs(&refs);
            print_json(&report);
            if report.diverged {
                return Err(rejected(format!("replicas diverge ({})", report.kind)));
            }
            Ok(())
        }
        Cmd::Gateway {
            cmd: GatewayCmd::Run { deploy, wait_ms },
        } => {
            let cfg = deploy_config(&deploy)?;
            let addr = start_gateway(&cfg, Duration::from_millis(wait_ms)).map_err(rejected)?;
            stdout_write(&format!("gateway listening on {addr}\n"));
            park()
        }
        Cmd::Node {
            cmd: NodeCmd::Run { index, deploy },
        } => {
            let cfg = deploy_config(&deploy)?;
            if index >= cfg.n_nodes() {
                return Err(usage(format!(
                    "node index {index} out of range for {} nodes",
                    cfg.n_nodes()
                )));
            }
            let addr = start_node(&cfg, index).map_err(rejected)?;
            stdout_write(&format!("node-{index} listening on {addr}\n"));
            park()
        }
        Cmd::Sim {
            cmd: SimCmd::Run { config, output },
        } => {
            let cfg = ScenarioConfig::from_json(&read_file(&config)?).map_err(usage)?;
            let report = run_scenario(&cfg).map_err(usage)?;
            emit(&report, &output)?;
            if report.violations.is_empty() {
                Ok(())
            } else {
                Err(rejected(report.violations.join("; ")))
            }
        }
        Cmd::Load {
            cmd:
                LoadCmd::Run {
                    mode,
                    config,
                    set,
                    output,
                },
        } => match mode {
            LoadMode::Sim => {
                if !set.is_empty() {
                    return Err(usage("--set applies to real mode only"));
                }
                let path = config.ok_or_else(|| usage("sim mode needs --config"))?;
                let cfg = LoadConfig::from_json(&read_file(&path)?).map_err(usage)?;
                emit(&run_load_sim(&cfg).map_err(usage)?, &output)
            }
            LoadMode::Real => {
                let cfg = DeployConfig::load(config.as_deref(), &set).map_err(usage)?;
                let exe = std::env::current_exe().map_err(rejected)?;
                emit(&run_real_load(&exe, &cfg).map_err(rejected)?, &output)
            }
        },
        Cmd::Suite { inject } => {
            let report = run_suite(&inject);
            stdout_write(&report.to_table());
            if report.all_passed() {
                Ok(())
            } else {
                Err(rejected(format!(
                    "{}/{} cases passed",
                    report.passed(),
                    report.cases.len()
                )))
            }
        }
    }
}

fn keygen(out: &Path, issuer: bool, label: Option<&str>, force: bool) -> Outcome {
    if out.exists() && !force {
        return Err(usage(format!(
            "{} exists; pass --force to overwrite",
            out.display()
        )));
    }
    let seed = |kind: &str| -> [u8; 32] {
        match label {
            Some(l) => seed_from_label(&format!("{l}/{kind}")),
            None => rand::rng().random(),
        }
    };
    if issuer {
        let keys = IssuerKeys::from_seed(seed("issuer"));
        keys.save(out).map_err(rejected)?;
        stdout_write(&format!("{}\n", keys.did));
    } else {
        let mut rng = rand::rng();
        let wallet = Wallet::create(
            seed("identity"),
            seed("face"),
            seed("template-key"),
            &mut rng,
        )
        .map_err(rejected)?;
        wallet.save(out).map_err(rejected)?;
        stdout_write(&format!("{}\n", wallet.did));
    }
    Ok(())
}

fn enroll(wallet_path: &Path, issuer_path: &Path, attrs: &[String], target: &Target) -> Outcome {
    let mut wallet = load_wallet(wallet_path)?;
    let issuer = IssuerKeys::load(issuer_path)
        .map_err(|e| usage(format!("{}: {e}", issuer_path.display())))?;
    let mut attributes = BTreeMap::new();
    for a in attrs {
        let (k, v) = a
            .split_once('=')
            .ok_or_else(|| usage(format!("attribute {a:?} is not NAME=VALUE")))?;
        attributes.insert(k.to_owned(), v.to_owned());
    }
    let req = build_enrollment(
        &wallet.did,
        &issuer.keys(),
        &issuer.did,
        attributes,
        BTreeMap::new(),
        now_ms(),
    )
    .map_err(rejected)?;
    let resp = match target.gateway {
        Some(addr) => connect(addr)?.enroll(&req).map_err(from_wire)?,
        None => {
            let cluster = open_local(&deploy_config(&target.deploy)?, now_ms()).map_err(usage)?;
            cluster
                .enroll(&req)
                .map_err(|e| rejected(format!("{}: {e}", e.code())))?
        }
    };
    wallet.credential = Some(resp.credential);
    wallet.save(wallet_path).map_err(rejected)?;
    print_json(&serde_json::json!({
        "credential_id": req.credential.credential_id,
        "metadata_cid": resp.metadata_cid,
    }));
    Ok(())
}

fn auth(wallet_path: &Path, impostor: bool, target: &Target) -> Outcome {
    let wallet = load_wallet(wallet_path)?;
    let mut rng = rand::rng();
    let presenter = if impostor {
        make_profile(&rng.random())
    } else {
        wallet.profile()
    };
    let probe = capture_probe(&presenter, DEFAULT_NOISE_SIGMA, &rng.random()).map_err(rejected)?;
    let att = DeviceAttestation::trusted();
    let prove = |challenge: [u8; 32], epoch: u64, rng: &mut dyn rand::Rng| match build_auth_request(
        &wallet,
        &probe,
        DEFAULT_THRESHOLD,
        &att,
        challenge,
        epoch,
        rng,
    ) {
        Ok((req, _)) => Ok(req),
        Err(ClientError::Proof(ProofError::MatchRejected)) => Err(rejected("match_rejected")),
        Err(ClientError::NotEnrolled) => Err(usage("wallet has no credential; enroll first")),
        Err(e) => Err(rejected(e)),
    };
    let resp: AuthResponse = match target.gateway {
        Some(addr) => {
            let mut conn = connect(addr)?;
            let epoch = conn.gateway_status().map_err(from_wire)?.ledger_height;
            let ch = conn.challenge(&wallet.did).map_err(from_wire)?;
            let req = prove(ch.challenge, epoch, &mut rng)?;
            conn.auth(&req).map_err(from_wire)?
        }
        None => {
            let now = now_ms();
            let cluster = open_local(&deploy_config(&target.deploy)?, now).map_err(usage)?;
            let ch = cluster.challenge(&wallet.did, now).map_err(rejected)?;
            let req = prove(ch.challenge, cluster.epoch(), &mut rng)?;
            cluster
                .authenticate(&req, now)
                .map_err(|e| rejected(format!("{}: {e}", e.code())))?
        }
    };
    print_json(&serde_json::json!({
        "outcome": resp.decision.outcome,
        "reason": resp.decision.reason,
        "accept_votes": resp.decision.accept_votes,
        "quorum": resp.decision.quorum,
        "n_nodes": resp.decision.n_nodes,
        "token": resp.token,
    }));
    if resp.decision.accepted() {
        Ok(())
    } else {
        Err(rejected(
            resp.decision.reason.unwrap_or_else(|| "rejected".into()),
        ))
    }
}

fn revoke(wallet_path: &Path, issuer: Option<&Path>, reason: u16, target: &Target) -> Outcome {
    let wallet = load_wallet(wallet_path)?;
    let cred = wallet.credential().map_err(usage)?;
    let keys = match issuer {
        Some(p) => IssuerKeys::load(p)
            .map_err(|e| usage(format!("{}: {e}", p.display())))?
            .keys(),
        None => wallet.keys(),
    };
    let req = RevokeRequest::sign(cred.credential_id, cred.metadata_cid, reason, &keys);
    let resp = match target.gateway {
        Some(addr) => connect(addr)?.revoke(&req).map_err(from_wire)?,
        None => {
            let now = now_ms();
            let cluster = open_local(&deploy_config(&target.deploy)?, now).map_err(usage)?;
            let block = cluster
                .revoke(&req, now)
                .map_err(|e| rejected(format!("{}: {e}", e.code())))?;
            RevokeResp {
                height: block.index + 1,
                block_hash: block.block_hash,
            }
        }
    };
    print_json(&resp);
    Ok(())
}

fn deploy_config(d: &Deploy) -> Result<DeployConfig, Fail> {
    DeployConfig::load(d.config.as_deref(), &d.set).map_err(usage)
}

fn load_wallet(path: &Path) -> Result<Wallet, Fail> {
    Wallet::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<Vec<u8>, Fail> {
    std::fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_audit(path: &Path) -> Result<Vec<AuditEntry>, Fail> {
    import_entries(&read_file(path)?)
        .map_err(|(line, m)| rejected(format!("{}: line {line}: {m}", path.display())))
}

fn connect(addr: SocketAddr) -> Result<Connection, Fail> {
    Connection::connect(addr, Duration::from_secs(5)).map_err(from_wire)
}

fn emit(report: &impl Render, output: &Output) -> Outcome {
    match &output.out {
        Some(path) => emit_report(report, output.format, path)
            .map_err(|e| rejected(format!("{}: {e}", path.display()))),
        None => {
            stdout_write(&report.render(output.format));
            Ok(())
        }
    }
}

fn print_json<T: Serialize>(value: &T) {
    stdout_write(&format!(
        "{}\n",
        serde_json::to_string_pretty(value).expect("output serializes")
    ));
}

/// Write to stdout; a closed pipe (`| head`) is not an error.
fn stdout_write(text: &str) {
    let mut stdout = std::io::stdout().lock();
    let _ = stdout
        .write_all(text.as_bytes())
        .and_then(|()| stdout.flush());
}

fn park() -> Outcome {
    loop {
        std::thread::park();
    }
}
