//! Twelve named end-to-end cases in five categories, with optional fault
//! injection that reintroduces two known defect classes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::audit::{
    export_entries, import_entries, verify_log, AuditEvent, AuditEventType, AuditLog, AuditPolicy,
    LogStatus,
};
use crate::biometric::{make_profile, DEFAULT_NOISE_SIGMA, DEFAULT_THRESHOLD};
use crate::client::{build_auth_request, build_enrollment, capture_probe, ClientError, Wallet};
use crate::cluster::{InProcessCluster, ViewSettings};
use crate::gateway::token::peek_claims;
use crate::gateway::{ExpiryPolicy, GatewayConfig, GatewayError, RevokeRequest, TokenValidity};
use crate::identity::{generate_identity, seed_from_label, Did, KeyPair};
use crate::proof::{DeviceAttestation, ProofError};
use crate::sim::{run_scenario, Action, LatencyModel, ScenarioConfig, TimedAction};
use crate::trust::{reason, MemoryStore, SharedLedger};

/// A deliberately reintroduced defect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Inject {
    /// Tokens stay valid for a grace period past their expiry.
    LegacyExpiry,
    /// Audit logs append in arrival order.
    NaiveAudit,
}

impl FromStr for Inject {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "legacy-expiry" => Ok(Inject::LegacyExpiry),
            "naive-audit" => Ok(Inject::NaiveAudit),
            other => Err(format!(
                "unknown injection {other:?} (expected legacy-expiry or naive-audit)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Enrolment,
    Authentication,
    Revocation,
    Audit,
    Session,
}

impl Category {
    pub fn label(&self) -> &'static str {
        match self {
            Category::Enrolment => "Enrolment",
            Category::Authentication => "Authentication",
            Category::Revocation => "Revocation",
            Category::Audit => "Audit",
            Category::Session => "Session",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseResult {
    pub name: String,
    pub category: Category,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub injections: Vec<Inject>,
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> usize {
        self.cases.iter().filter(|c| c.passed).count()
    }

    pub fn all_passed(&self) -> bool {
        self.passed() == self.cases.len()
    }

    pub fn category_rows(&self) -> Vec<(Category, usize, usize)> {
        let mut rows: BTreeMap<Category, (usize, usize)> = BTreeMap::new();
        for c in &self.cases {
            let r = rows.entry(c.category).or_default();
            r.0 += 1;
            r.1 += c.passed as usize;
        }
        rows.into_iter().map(|(k, (n, p))| (k, n, p)).collect()
    }

    /// Per-case rows, then a per-category summary table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for c in &self.cases {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(
                out,
                "{mark}  {:<15} {:<40} {}",
                c.category.label(),
                c.name,
                c.detail
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<15} {:>5} {:>6} {:>6}",
            "Category", "Cases", "Passed", "Rate"
        );
        for (cat, n, p) in self.category_rows() {
            let _ = writeln!(
                out,
                "{:<15} {n:>5} {p:>6} {:>5.0}%",
                cat.label(),
                100.0 * p as f64 / n as f64
            );
        }
        let total = self.cases.len();
        let _ = writeln!(
            out,
            "{:<15} {total:>5} {:>6} {:>5.0}%",
            "Total",
            self.passed(),
            100.0 * self.passed() as f64 / total as f64
        );
        out
    }
}

type Outcome = Result<String, String>;

fn check(cond: bool, ok: impl Into<String>, fail: impl Into<String>) -> Outcome {
    if cond {
        Ok(ok.into())
    } else {
        Err(fail.into())
    }
}

struct Fixture {
    cluster: InProcessCluster,
    wallet: Wallet,
    issuer: Did,
    issuer_keys: KeyPair,
    rng: ChaCha20Rng,
}

const T0: u64 = 1_700_000_000_000;

impl Fixture {
    fn new(expiry: ExpiryPolicy) -> Result<Self, String> {
        let mut config = GatewayConfig::for_nodes(3);
        config.expiry_policy = expiry;
        let cluster = InProcessCluster::new(
            "suite",
            3,
            config,
            ViewSettings::default(),
            Arc::new(MemoryStore::new()),
            Arc::new(SharedLedger::default()),
            seed_from_label("suite/mac").to_vec(),
            Some(seed_from_label("suite/gateway")),
            T0,
        )
        .map_err(|e| e.to_string())?;
        let mut rng = ChaCha20Rng::from_seed(seed_from_label("suite/rng"));
        let wallet = Wallet::create(
            seed_from_label("suite/alice"),
            seed_from_label("suite/alice-face"),
            seed_from_label("suite/alice-key"),
            &mut rng,
        )
        .map_err(|e| e.to_string())?;
        let (issuer, issuer_keys) = generate_identity(&seed_from_label("suite/issuer"));
        Ok(Fixture {
            cluster,
            wallet,
            issuer,
            issuer_keys,
            rng,
        })
    }

    fn enrolled(expiry: ExpiryPolicy) -> Result<Self, String> {
        let mut f = Fixture::new(expiry)?;
        let req = f.enrollment()?;
        let resp = f.cluster.enroll(&req).map_err(|e| e.to_string())?;
        f.wallet.credential = Some(resp.credential);
        Ok(f)
    }

    fn enrollment(&self) -> Result<crate::gateway::EnrollRequest, String> {
        build_enrollment(
            &self.wallet.did,
            &self.issuer_keys,
            &self.issuer,
            BTreeMap::new(),
            BTreeMap::from([("role".to_owned(), "staff".to_owned())]),
            T0,
        )
        .map_err(|e| e.to_string())
    }

    fn auth_request(
        &mut self,
        now: u64,
        presenter_seed: Option<&str>,
    ) -> Result<crate::gateway::AuthRequest, ClientError> {
        let ch = self
            .cluster
            .challenge(&self.wallet.did, now)
            .map_err(|e| ClientError::Io(std::io::Error::other(e.to_string())))?;
        let presenter = match presenter_seed {
            Some(s) => make_profile(&seed_from_label(s)),
            None => self.wallet.profile(),
        };
        let probe = capture_probe(
            &presenter,
            DEFAULT_NOISE_SIGMA,
            &seed_from_label(&format!("suite/probe/{now}")),
        )?;
        build_auth_request(
            &self.wallet,
            &probe,
            DEFAULT_THRESHOLD,
            &DeviceAttestation::trusted(),
            ch.challenge,
            self.cluster.epoch(),
            &mut self.rng,
        )
        .map(|(req, _)| req)
    }

    fn token(&mut self, now: u64) -> Result<String, String> {
        let req = self.auth_request(now, None).map_err(|e| e.to_string())?;
        let resp = self
            .cluster
            .authenticate(&req, now)
            .map_err(|e| e.to_string())?;
        resp.token
            .ok_or_else(|| format!("auth rejected: {:?}", resp.decision.reason))
    }
}

fn enrol_valid() -> Outcome {
    let f = Fixture::new(ExpiryPolicy::Strict)?;
    let req = f.enrollment()?;
    let resp = f.cluster.enroll(&req).map_err(|e| e.to_string())?;
    let stored = f
        .cluster
        .store
        .get(&resp.metadata_cid)
        .map_err(|e| e.to_string())?;
    check(
        crate::trust::Cid::of(&stored) == resp.metadata_cid && resp.credential == req.credential,
        format!("metadata stored at {}", resp.metadata_cid),
        "stored metadata does not match its address",
    )
}

fn enrol_forged_signature() -> Outcome {
    let f = Fixture::new(ExpiryPolicy::Strict)?;
    let mut req = f.enrollment()?;
    req.credential.signature[10] ^= 0x40;
    match f.cluster.enroll(&req) {
        Err(GatewayError::InvalidCredential(m)) => Ok(format!("refused: {m}")),
        other => Err(format!("expected invalid_credential, got {other:?}")),
    }
}

fn enrol_privacy() -> Outcome {
    let f = Fixture::new(ExpiryPolicy::Strict)?;
    let mut req = f.enrollment()?;
    req.metadata["claims"] = json!({ "face_embedding": "00ff" });
    match f.cluster.enroll(&req) {
        Err(GatewayError::PrivacyViolation(m)) => Ok(format!("refused: {m}")),
        other => Err(format!("expected privacy_violation, got {other:?}")),
    }
}

fn auth_genuine() -> Outcome {
    let mut f = Fixture::enrolled(ExpiryPolicy::Strict)?;
    let token = f.token(T0 + 1_000)?;
    let valid = f
        .cluster
        .gateway
        .validate_token(&token, T0 + 1_000)
        .is_valid();
    check(
        valid,
        "3/3 accept, token valid",
        "token minted but does not validate",
    )
}

fn auth_impostor() -> Outcome {
    let mut f = Fixture::enrolled(ExpiryPolicy::Strict)?;
    match f.auth_request(T0 + 1_000, Some("suite/mallory-face")) {
        Err(ClientError::Proof(ProofError::MatchRejected)) => {
            Ok("local match rejected, no proof produced".into())
        }
        Ok(_) => Err("impostor produced a proof".into()),
        Err(e) => Err(format!("unexpected failure: {e}")),
    }
}

fn auth_replay() -> Outcome {
    let mut f = Fixture::enrolled(ExpiryPolicy::Strict)?;
    let req = f
        .auth_request(T0 + 1_000, None)
        .map_err(|e| e.to_string())?;
    let first = f
        .cluster
        .authenticate(&req, T0 + 1_000)
        .map_err(|e| e.to_string())?;
    if !first.decision.accepted() {
        return Err("first use rejected".into());
    }
    match f.cluster.authenticate(&req, T0 + 1_100) {
        Err(GatewayError::UnknownChallenge) => Ok("replayed challenge refused".into()),
        other => Err(format!("replay not refused: {other:?}")),
    }
}

fn revocation_rejects() -> Outcome {
    let mut f = Fixture::enrolled(ExpiryPolicy::Strict)?;
    let cred = f.wallet.credential.clone().ok_or("not enrolled")?;
    let req = RevokeRequest::sign(
        cred.credential_id,
        cred.metadata_cid,
        reason::KEY_COMPROMISE,
        &f.issuer_keys,
    );
    f.cluster
        .revoke(&req, T0 + 2_000)
        .map_err(|e| e.to_string())?;
    f.cluster.refresh_all(T0 + 2_000);
    let auth = f
        .auth_request(T0 + 3_000, None)
        .map_err(|e| e.to_string())?;
    let resp = f
        .cluster
        .authenticate(&auth, T0 + 3_000)
        .map_err(|e| e.to_string())?;
    check(
        !resp.decision.accepted()
            && resp.decision.reason.as_deref() == Some("revoked")
            && resp.token.is_none(),
        "rejected with reason revoked",
        format!("decision {:?}", resp.decision.reason),
    )
}

fn revocation_propagates() -> Outcome {
    let mut cfg = ScenarioConfig::from_json(br#"{"seed": 11}"#).map_err(|e| e.to_string())?;
    cfg.latency = LatencyModel::Uniform {
        min_ms: 50,
        max_ms: 150,
    };
    let after = 1_000 + cfg.window_bound_ms() + 1;
    cfg.workload = vec![
        TimedAction {
            at_ms: 0,
            action: Action::Enroll {
                subject: "bob".into(),
                count: 1,
            },
        },
        TimedAction {
            at_ms: 1_000,
            action: Action::Revoke {
                subject: "bob".into(),
            },
        },
        TimedAction {
            at_ms: after,
            action: Action::Auth {
                subject: "bob".into(),
                impostor: false,
            },
        },
    ];
    let r = run_scenario(&cfg).map_err(|e| e.to_string())?;
    let window = r
        .max_window_ms()
        .ok_or("revocation never reached every node")?;
    let rejected = r
        .auths
        .iter()
        .all(|a| a.reason.as_deref() == Some("revoked"));
    check(
        window <= r.window_bound_ms && rejected && r.violations.is_empty(),
        format!(
            "window {window} ms <= {} ms, later auth rejected",
            r.window_bound_ms
        ),
        format!("window {window} ms, violations {:?}", r.violations),
    )
}

fn audit_tamper_evident(policy: AuditPolicy) -> Outcome {
    let actor = generate_identity(&seed_from_label("suite/gw")).0;
    let events: Vec<AuditEvent> = (0..10u64)
        .map(|i| {
            let mut event_id = [0u8; 16];
            event_id[..8].copy_from_slice(&i.to_be_bytes());
            AuditEvent {
                event_type: AuditEventType::AuthAccept,
                actor_did: actor.clone(),
                payload: json!({ "n": i }),
                event_time: T0 + i,
                event_id,
            }
        })
        .collect();
    // two replicas see the same events, the second in reverse arrival order
    let mut log = AuditLog::new(policy, crate::audit::DEFAULT_SETTLE_DELAY_MS);
    let mut replica = AuditLog::new(policy, crate::audit::DEFAULT_SETTLE_DELAY_MS);
    for (i, ev) in events.iter().enumerate() {
        log.append_event(ev.clone(), T0 + 20 + i as u64);
    }
    for (i, ev) in events.iter().rev().enumerate() {
        replica.append_event(ev.clone(), T0 + 20 + i as u64);
    }
    log.flush_all();
    replica.flush_all();
    if log.head_hash() != replica.head_hash() {
        return Err("replicas disagree on the chain head".into());
    }
    if verify_log(log.entries()) != LogStatus::Ok {
        return Err("untampered log fails verification".into());
    }
    let mut bytes = export_entries(log.entries());
    let line_start = bytes
        .iter()
        .enumerate()
        .filter(|(_, b)| **b == b'\n')
        .nth(4)
        .map(|(i, _)| i + 1)
        .ok_or("short export")?;
    // flip a bit inside the sixth entry's hash field
    let pos = line_start
        + bytes[line_start..]
            .windows(11)
            .position(|w| w == b"entry_hash\"")
            .ok_or("no hash field")?
        + 14;
    bytes[pos] ^= 0x01;
    let detected = match import_entries(&bytes) {
        Err(_) => true,
        Ok(entries) => verify_log(&entries) != LogStatus::Ok,
    };
    check(
        detected,
        "replicas agree, chain verifies, single bit flip detected",
        "bit flip not detected",
    )
}

fn audit_burst_consistent(policy: AuditPolicy) -> Outcome {
    let mut diverged = 0;
    let runs = 20;
    for seed in 0..runs {
        let mut cfg = ScenarioConfig::from_json(format!(r#"{{"seed": {seed}}}"#).as_bytes())
            .map_err(|e| e.to_string())?;
        cfg.latency = LatencyModel::Uniform {
            min_ms: 10,
            max_ms: 150,
        };
        cfg.audit_policy = policy;
        cfg.workload = vec![
            TimedAction {
                at_ms: 0,
                action: Action::Enroll {
                    subject: "u".into(),
                    count: 20,
                },
            },
            TimedAction {
                at_ms: 1_000,
                action: Action::RevokeBurst {
                    subject: "u".into(),
                    count: 20,
                    spacing_ms: 1,
                },
            },
        ];
        let r = run_scenario(&cfg).map_err(|e| e.to_string())?;
        diverged += r.audit.diverged as usize;
    }
    check(
        diverged == 0,
        format!("0/{runs} bursts diverged"),
        format!("{diverged}/{runs} bursts diverged"),
    )
}

fn session_boundary(policy: ExpiryPolicy) -> Outcome {
    let mut f = Fixture::enrolled(policy)?;
    let token = f.token(T0 + 1_000)?;
    let exp = peek_claims(&token).ok_or("unreadable token")?.exp;
    let before = f.cluster.gateway.validate_token(&token, exp * 1000 - 1);
    let at = f.cluster.gateway.validate_token(&token, exp * 1000);
    check(
        before.is_valid() && !at.is_valid(),
        "valid before exp, rejected at exp",
        format!("at exp: {at:?}"),
    )
}

fn session_no_extension(policy: ExpiryPolicy) -> Outcome {
    let mut f = Fixture::enrolled(policy)?;
    let token = f.token(T0 + 1_000)?;
    let exp = peek_claims(&token).ok_or("unreadable token")?.exp;
    let later = f.cluster.gateway.validate_token(&token, (exp + 120) * 1000);
    check(
        matches!(later, TokenValidity::Invalid(_)),
        "rejected 120 s after expiry",
        "still accepted 120 s after expiry",
    )
}

/// Run all twelve cases.
pub fn run_suite(injections: &[Inject]) -> SuiteReport {
    let expiry = if injections.contains(&Inject::LegacyExpiry) {
        ExpiryPolicy::Legacy
    } else {
        ExpiryPolicy::Strict
    };
    let audit = if injections.contains(&Inject::NaiveAudit) {
        AuditPolicy::Naive
    } else {
        AuditPolicy::Deterministic
    };
    type Case = (Category, &'static str, Box<dyn Fn() -> Outcome>);
    let cases: Vec<Case> = vec![
        (
            Category::Enrolment,
            "enrol_valid_credential",
            Box::new(enrol_valid),
        ),
        (
            Category::Enrolment,
            "enrol_rejects_forged_signature",
            Box::new(enrol_forged_signature),
        ),
        (
            Category::Enrolment,
            "enrol_rejects_biometric_metadata",
            Box::new(enrol_privacy),
        ),
        (
            Category::Authentication,
            "auth_genuine_user_accepted",
            Box::new(auth_genuine),
        ),
        (
            Category::Authentication,
            "auth_impostor_rejected",
            Box::new(auth_impostor),
        ),
        (
            Category::Authentication,
            "auth_replayed_challenge_refused",
            Box::new(auth_replay),
        ),
        (
            Category::Revocation,
            "revoked_credential_rejected",
            Box::new(revocation_rejects),
        ),
        (
            Category::Revocation,
            "revocation_reaches_all_nodes",
            Box::new(revocation_propagates),
        ),
        (
            Category::Audit,
            "audit_chain_tamper_evident",
            Box::new(move || audit_tamper_evident(audit)),
        ),
        (
            Category::Audit,
            "audit_consistent_under_burst",
            Box::new(move || audit_burst_consistent(audit)),
        ),
        (
            Category::Session,
            "session_rejected_at_expiry",
            Box::new(move || session_boundary(expiry)),
        ),
        (
            Category::Session,
            "session_not_extended",
            Box::new(move || session_no_extension(expiry)),
        ),
    ];
    let cases = cases
        .into_iter()
        .map(|(category, name, run)| {
            let (passed, detail) = match run() {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CaseResult {
                name: name.to_owned(),
                category,
                passed,
                detail,
            }
        })
        .collect();
    SuiteReport {
        injections: injections.to_vec(),
        cases,
    }
}
