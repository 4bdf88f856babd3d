//! Acceptance criteria, one line each. Runs without the libtest harness so
//! the summary is always printed; exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;

use bioid_core::audit::{
    import_entries, verify_log, AuditEvent, AuditEventType, AuditLog, AuditPolicy, LogStatus,
};
use bioid_core::biometric::{
    enrolment_reference, make_profile, match_embeddings, sample_embedding,
};
use bioid_core::client::{build_auth_request, build_enrollment, capture_probe, Wallet};
use bioid_core::cluster::{node_id, node_keys, InProcessCluster, ViewSettings};
use bioid_core::credential::{verify_credential, Credential, CredentialId};
use bioid_core::functional::{run_suite, Category, Inject};
use bioid_core::gateway::{ExpiryPolicy, GatewayConfig, TokenSigner};
use bioid_core::identity::{generate_identity, seed_from_label};
use bioid_core::net::{run_real_load, DeployConfig};
use bioid_core::node::VerifyResult;
use bioid_core::proof::{build_proof, DeviceAttestation, RejectReason, Verdict};
use bioid_core::sim::{
    run_load_sim, run_scenario, Action, LatencyModel, LoadConfig, ScenarioConfig, TimedAction,
};
use bioid_core::trust::{
    verify_chain, CacheMode, ChainStatus, MemoryStore, RevocationLedger, SharedLedger,
};

struct Check {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Check);
/// Name, serialized artifact, and the check that must reject any flip in it.
type Target<'a> = (&'static str, &'a [u8], &'a dyn Fn(&[u8]) -> bool);

fn verdict(pass: bool, detail: impl Into<String>) -> Check {
    Check {
        pass,
        detail: detail.into(),
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("1 quorum enumeration", quorum_enumeration),
        ("2 tamper evidence", tamper_evidence),
        ("3 revocation propagation", revocation_propagation),
        ("4 audit divergence", audit_divergence),
        ("5 biometric calibration", biometric_calibration),
        ("6 functional suite", functional_suite),
        ("7 latency", latency),
        ("8 privacy and security", privacy_security),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let v = check();
        let secs = started.elapsed().as_secs_f64();
        println!(
            "{} criterion {name}: {} ({secs:.1} s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        failed += usize::from(!v.pass);
    }
    println!("{}/8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

const ISSUER: &str = "acceptance/issuer";

fn cluster(label: &str, n: usize, quorum: usize, capacity: u64) -> InProcessCluster {
    let mut config = GatewayConfig::for_nodes(n);
    config.quorum = quorum;
    config.rate_capacity = capacity;
    InProcessCluster::new(
        label,
        n,
        config,
        ViewSettings::default(),
        Arc::new(MemoryStore::new()),
        Arc::new(SharedLedger::default()),
        b"acceptance-mac-key".to_vec(),
        Some([3; 32]),
        0,
    )
    .expect("cluster config")
}

fn enrolled_wallet(c: &InProcessCluster, name: &str, rng: &mut ChaCha20Rng) -> Wallet {
    let tag = |k: &str| seed_from_label(&format!("acceptance/{name}/{k}"));
    let mut w = Wallet::create(tag("id"), tag("face"), tag("tk"), rng).expect("wallet");
    let (issuer, keys) = generate_identity(&seed_from_label(ISSUER));
    let req = build_enrollment(&w.did, &keys, &issuer, BTreeMap::new(), BTreeMap::new(), 0)
        .expect("enrollment");
    c.enroll(&req).expect("enroll");
    w.credential = Some(req.credential);
    w
}

fn auth_request(
    c: &InProcessCluster,
    w: &Wallet,
    now: u64,
    rng: &mut ChaCha20Rng,
) -> bioid_core::gateway::AuthRequest {
    let ch = c.challenge(&w.did, now).expect("challenge");
    let probe = capture_probe(&w.profile(), 0.0, &[0; 32]).expect("probe");
    build_auth_request(
        w,
        &probe,
        0.8,
        &DeviceAttestation::trusted(),
        ch.challenge,
        c.epoch(),
        rng,
    )
    .expect("auth request")
    .0
}

/// Every accept/reject/timeout combination for n=3, q=2 through the
/// gateway with genuinely signed votes, against a brute-force count.
fn quorum_enumeration() -> Check {
    let label = "acceptance-quorum";
    let c = cluster(label, 3, 2, 1_000);
    let mut rng = ChaCha20Rng::from_seed([1; 32]);
    let w = enrolled_wallet(&c, "quorum", &mut rng);
    let mut mismatches = Vec::new();
    let mut cases = 0;
    for code in 0..27u32 {
        let slots: Vec<u32> = (0..3).map(|i| code / 3u32.pow(i) % 3).collect();
        let req = auth_request(&c, &w, 10, &mut rng);
        let pending = c.gateway.begin_auth(&req, 10).expect("begin");
        let votes: Vec<VerifyResult> = slots
            .iter()
            .enumerate()
            .filter(|(_, s)| **s != 2)
            .map(|(i, s)| {
                let mut v = VerifyResult {
                    task_id: pending.task.task_id,
                    node_id: node_id(i),
                    vote: if *s == 0 {
                        Verdict::Accept
                    } else {
                        Verdict::Reject(RejectReason::Revoked)
                    },
                    as_of_height: 0,
                    node_signature: [0; 64],
                };
                v.node_signature = node_keys(label, i).sign(&v.signing_bytes());
                v
            })
            .collect();
        let resp = c.gateway.complete_auth(&pending, votes, 10);
        let accepts = slots.iter().filter(|s| **s == 0).count();
        let missing = slots.iter().filter(|s| **s == 2).count();
        let expect_accept = accepts >= 2;
        let d = &resp.decision;
        let ok = d.accepted() == expect_accept
            && resp.token.is_some() == expect_accept
            && d.accept_votes == accepts
            && d.missing_votes == missing
            && !d.unilateral;
        if !ok {
            mismatches.push(format!("{slots:?}"));
        }
        cases += 1;
    }
    let single = cluster("acceptance-single", 1, 1, 1_000);
    let flagged_gateway = single.gateway.status().unilateral;
    let mut scenario = ScenarioConfig::from_json(br#"{"seed":1,"n_nodes":1}"#).expect("scenario");
    scenario.workload = vec![TimedAction {
        at_ms: 0,
        action: Action::Enroll {
            subject: "solo".into(),
            count: 1,
        },
    }];
    let report = run_scenario(&scenario).expect("scenario runs");
    let flagged_sim = report.unilateral && !report.violations.is_empty();
    verdict(
        cases == 27 && mismatches.is_empty() && flagged_gateway && flagged_sim,
        format!(
            "{cases}/27 cases match the brute-force rule, {} mismatches; n=1 flagged by gateway={flagged_gateway} sim={flagged_sim}",
            mismatches.len()
        ),
    )
}

fn flip(data: &[u8], rng: &mut ChaCha20Rng) -> Vec<u8> {
    let mut out = data.to_vec();
    let bit = rng.random_range(0..data.len() * 8);
    out[bit / 8] ^= 1 << (bit % 8);
    out
}

/// 250 single-bit flips in each of credentials, tokens, ledger exports, and
/// audit exports; each must be caught by the decoder or the verifier.
fn tamper_evidence() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha20Rng::from_seed([2; 32]);
    let (issuer, issuer_keys) = generate_identity(&seed_from_label(ISSUER));
    let (subject, _) = generate_identity(&seed_from_label("acceptance/tamper/subject"));
    let req = build_enrollment(
        &subject,
        &issuer_keys,
        &issuer,
        BTreeMap::new(),
        BTreeMap::new(),
        5,
    )
    .expect("enroll");
    let cred_wire = req.credential.to_wire();
    let cred_ok = |b: &[u8]| {
        Credential::from_wire(b).is_ok_and(|c| verify_credential(&c, &issuer_keys.public_key()))
    };

    let signer = TokenSigner::new(b"acceptance-token-key".to_vec(), 900, ExpiryPolicy::Strict);
    let token = signer.mint(
        &subject.to_string(),
        "00112233445566778899aabbccddeeff",
        1_000,
    );
    let token_ok =
        |b: &[u8]| std::str::from_utf8(b).is_ok_and(|t| signer.validate_token(t, 1_001).is_valid());

    let mut ledger = RevocationLedger::new();
    for i in 0..8u8 {
        ledger
            .append_revocation(CredentialId::from_bytes([i; 16]), 1, 100 + u64::from(i))
            .expect("append");
    }
    let ledger_wire = ledger.export();
    let ledger_ok = |b: &[u8]| {
        RevocationLedger::import_blocks(b).is_ok_and(|bl| verify_chain(&bl) == ChainStatus::Ok)
    };

    let mut log = AuditLog::new(AuditPolicy::Deterministic, 0);
    for i in 0..8u8 {
        log.append_event(
            AuditEvent {
                event_type: AuditEventType::AuthAccept,
                actor_did: issuer.clone(),
                payload: serde_json::json!({ "ref": i }),
                event_time: u64::from(i),
                event_id: [i; 16],
            },
            u64::from(i),
        );
    }
    log.flush_all();
    let audit_wire = log.export();
    let audit_ok = |b: &[u8]| import_entries(b).is_ok_and(|e| verify_log(&e) == LogStatus::Ok);

    let targets: [Target; 4] = [
        ("credential", &cred_wire, &cred_ok),
        ("token", token.as_bytes(), &token_ok),
        ("ledger", &ledger_wire, &ledger_ok),
        ("audit", &audit_wire, &audit_ok),
    ];
    let mut total = 0;
    let mut missed = Vec::new();
    for (name, original, accepts) in targets {
        if !accepts(original) {
            return verdict(false, format!("unmodified {name} does not verify"));
        }
        for _ in 0..250 {
            let m = flip(original, &mut rng);
            total += 1;
            if accepts(&m) {
                missed.push(name);
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        total == 1000 && missed.is_empty() && secs < 30.0,
        format!(
            "{total} mutations, {} undetected {missed:?}, {secs:.2} s (limit 30 s)",
            missed.len()
        ),
    )
}

fn revocation_scenario(seed: u64, mode: CacheMode) -> ScenarioConfig {
    let mut cfg =
        ScenarioConfig::from_json(format!(r#"{{"seed":{seed}}}"#).as_bytes()).expect("scenario");
    cfg.poll_interval_ms = 500;
    cfg.ttl_ms = 1000;
    cfg.latency = LatencyModel::Uniform {
        min_ms: 50,
        max_ms: 150,
    };
    cfg.cache_mode = mode;
    let at = |at_ms, action| TimedAction { at_ms, action };
    let auth = || Action::Auth {
        subject: "alice".into(),
        impostor: false,
    };
    cfg.workload = vec![
        at(
            0,
            Action::Enroll {
                subject: "alice".into(),
                count: 1,
            },
        ),
        at(10, auth()),
        at(
            3000,
            Action::Revoke {
                subject: "alice".into(),
            },
        ),
        at(3001, auth()),
        at(3200, auth()),
        at(3600, auth()),
    ];
    cfg
}

fn revocation_propagation() -> Check {
    let started = Instant::now();
    let mut inside = 0;
    let mut stale_runs = 0;
    let mut max_window = 0;
    let mut over_bound = 0;
    let mut event_slower = 0;
    let mut violations = 0;
    for seed in 0..100 {
        let p = run_scenario(&revocation_scenario(seed, CacheMode::Polling)).expect("polling run");
        let e =
            run_scenario(&revocation_scenario(seed, CacheMode::EventDriven)).expect("event run");
        violations += p.violations.len() + e.violations.len();
        if !p.auths_inside_window().is_empty() {
            inside += 1;
            stale_runs += usize::from(!p.stale_acceptances.is_empty());
        }
        for r in &p.revocations {
            let w = r.window_ms.unwrap_or(u64::MAX);
            max_window = max_window.max(w);
            over_bound += usize::from(w > 1650);
        }
        let (pw, ew) = (p.max_window_ms(), e.max_window_ms());
        if !(pw.is_some() && ew.is_some() && ew <= pw) {
            event_slower += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let a = inside > 0 && stale_runs * 100 >= 95 * inside;
    verdict(
        a && over_bound == 0 && event_slower == 0 && violations == 0 && secs < 60.0,
        format!(
            "(a) stale acceptance in {stale_runs}/{inside} runs with an auth inside the window (need >=95%); \
             (b) max window {max_window} ms, {over_bound} over 1650; (c) {event_slower} seeds where event-driven was slower; \
             {violations} invariant violations"
        ),
    )
}

fn burst_scenario(seed: u64, policy: AuditPolicy) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::from_json(format!(r#"{{"seed":{seed},"n_nodes":3}}"#).as_bytes())
        .expect("scenario");
    cfg.latency = LatencyModel::Uniform {
        min_ms: 50,
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
            at_ms: 1000,
            action: Action::RevokeBurst {
                subject: "u".into(),
                count: 20,
                spacing_ms: 1,
            },
        },
    ];
    cfg
}

fn audit_divergence() -> Check {
    let started = Instant::now();
    let mut naive = 0;
    let mut deterministic = 0;
    let mut verified = true;
    for seed in 0..100 {
        naive += usize::from(
            run_scenario(&burst_scenario(seed, AuditPolicy::Naive))
                .expect("naive")
                .audit
                .diverged,
        );
        let r =
            run_scenario(&burst_scenario(seed, AuditPolicy::Deterministic)).expect("deterministic");
        deterministic += usize::from(r.audit.diverged);
        verified &= r.audit.entry_counts == vec![40; 3];
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        naive >= 1 && deterministic == 0 && verified && secs < 60.0,
        format!("naive diverged in {naive}/100 runs (need >=1), deterministic in {deterministic}/100 (need 0)"),
    )
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// 10,000 genuine and 10,000 impostor pairs at D=128, sigma 0.05,
/// threshold 0.8, with seeds disjoint from the calibration run. Each
/// decision is cross-checked against a cosine computed here.
fn biometric_calibration() -> Check {
    let mut rng = ChaCha20Rng::from_seed(seed_from_label("acceptance/biometric"));
    let (mut genuine, mut impostor, mut disagreements) = (0, 0, 0);
    let n = 10_000;
    for _ in 0..n {
        let a = make_profile(&rng.random());
        let b = make_profile(&rng.random());
        let reference = enrolment_reference(&a);
        if reference.dim() != 128 {
            return verdict(false, format!("dimension {}", reference.dim()));
        }
        let g = sample_embedding(&a, 0.05, &rng.random()).expect("sample");
        let i = sample_embedding(&b, 0.05, &rng.random()).expect("sample");
        for (probe, counter) in [(&g, &mut genuine), (&i, &mut impostor)] {
            let m = match_embeddings(&reference, probe, 0.8).expect("match");
            let oracle = cosine(reference.values(), probe.values()) >= 0.8;
            disagreements += usize::from(m.accepted != oracle);
            *counter += usize::from(m.accepted);
        }
    }
    let gar = genuine as f64 / n as f64 * 100.0;
    let far = impostor as f64 / n as f64 * 100.0;
    verdict(
        gar >= 99.0 && far <= 1.0 && disagreements == 0,
        format!("genuine accept {gar:.2}% (need >=99), impostor accept {far:.2}% (need <=1), {disagreements} oracle disagreements"),
    )
}

fn functional_suite() -> Check {
    let clean = run_suite(&[]);
    let rows = |r: &bioid_core::functional::SuiteReport, cat: Category| {
        r.cases
            .iter()
            .filter(|c| c.category == cat)
            .all(|c| c.passed)
    };
    let others_pass = |r: &bioid_core::functional::SuiteReport, cat: Category| {
        r.cases
            .iter()
            .filter(|c| c.category != cat)
            .all(|c| c.passed)
    };
    let legacy = run_suite(&[Inject::LegacyExpiry]);
    let naive = run_suite(&[Inject::NaiveAudit]);
    let legacy_ok = !rows(&legacy, Category::Session) && others_pass(&legacy, Category::Session);
    let naive_ok = !rows(&naive, Category::Audit) && others_pass(&naive, Category::Audit);
    verdict(
        clean.cases.len() == 12 && clean.all_passed() && legacy_ok && naive_ok,
        format!(
            "default {}/{}; legacy-expiry {}/12 with session rows failing={legacy_ok}; naive-audit {}/12 with audit rows failing={naive_ok}",
            clean.passed(),
            clean.cases.len(),
            legacy.passed(),
            naive.passed()
        ),
    )
}

fn latency() -> Check {
    // 1 client, fixed hops: 2 x 80 ms client hop + 2 x 120 ms node hop.
    let cfg = LoadConfig {
        seed: 7,
        n_nodes: 3,
        quorum: None,
        clients: 1,
        duration_ms: 10_000,
        think_time_ms: 0,
        client_latency: LatencyModel::Fixed { ms: 80 },
        node_latency: LatencyModel::Fixed { ms: 120 },
        gateway_service_ms: 0,
        node_service_ms: 0,
        node_timeout_ms: 2_000,
    };
    let analytic = 400;
    let sim = run_load_sim(&cfg).expect("sim load");
    let sim_ok = sim.count > 0
        && sim
            .samples
            .iter()
            .all(|s| s.latency_ms.abs_diff(analytic) <= 1);

    let started = Instant::now();
    let profile = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper_profile.toml");
    let dir = tempfile::tempdir().expect("tempdir");
    let data_dir = format!(
        "data_dir={:?}",
        dir.path().join("data").to_str().expect("utf-8 path")
    );
    let real = DeployConfig::load(Some(&profile), &[data_dir])
        .map_err(|e| e.to_string())
        .and_then(|cfg| {
            run_real_load(Path::new(env!("CARGO_BIN_EXE_bioid")), &cfg).map_err(|e| e.to_string())
        });
    let secs = started.elapsed().as_secs_f64();
    match real {
        Ok(r) => {
            let real_ok = r.count > 0
                && r.accepted == r.count
                && (700..=950).contains(&r.p95_ms)
                && r.node_processed.len() == 3
                && secs < 300.0;
            verdict(
                sim_ok && real_ok,
                format!(
                    "(a) sim p50 {} ms vs analytic {analytic} ms over {} requests; (b) real {} requests, p50 {} / p95 {} / p99 {} ms (p95 need 700-950), {secs:.0} s",
                    sim.p50_ms, sim.count, r.count, r.p50_ms, r.p95_ms, r.p99_ms
                ),
            )
        }
        Err(e) => verdict(
            false,
            format!("(a) sim ok={sim_ok}; (b) real run failed: {e}"),
        ),
    }
}

fn privacy_security() -> Check {
    let mut rng = ChaCha20Rng::from_seed([8; 32]);
    let c = cluster("acceptance-privacy", 3, 2, 1_000);
    let w = enrolled_wallet(&c, "privacy", &mut rng);

    // (a) storage dump after a full cycle
    let req = auth_request(&c, &w, 100, &mut rng);
    let accepted = c
        .authenticate(&req, 100)
        .is_ok_and(|r| r.decision.accepted());
    let pending = c.challenge(&w.did, 110).is_ok();
    let dump = serde_json::to_string(&c.gateway.storage_dump(120)).expect("dump serializes");
    let reference = w.reference().expect("reference");
    let wire = reference.to_wire();
    let needles = [
        w.did.to_string(),
        w.did.identifier().to_owned(),
        w.public_key.to_hex(),
        hex::encode(&wire),
        hex::encode(&wire[..8]),
    ];
    let a = accepted && pending && needles.iter().all(|n| !dump.contains(n.as_str()));

    // (b) token expiry boundary
    let signer = TokenSigner::new(b"acceptance-token-key".to_vec(), 900, ExpiryPolicy::Strict);
    let token = signer.mint("sub", "sid", 1_000);
    let b = signer.validate_token(&token, 1_899).is_valid()
        && !signer.validate_token(&token, 1_900).is_valid();

    // (c) 100 concurrent replays of one authentication
    let replay = auth_request(&c, &w, 200, &mut rng);
    let wins: usize = thread::scope(|s| {
        let handles: Vec<_> = (0..100)
            .map(|_| s.spawn(|| c.authenticate(&replay, 201).is_ok()))
            .collect();
        handles
            .into_iter()
            .map(|h| usize::from(h.join().expect("thread")))
            .sum()
    });
    let cc = wins == 1;

    // (d) proofs never carry embedding or salt bytes
    let cred = w.credential().expect("credential");
    let mut leaks = 0;
    for k in 0..200u32 {
        let probe = capture_probe(
            &w.profile(),
            0.05,
            &seed_from_label(&format!("acceptance/probe/{k}")),
        )
        .expect("probe");
        let m = match_embeddings(&reference, &probe, 0.8).expect("match");
        if !m.accepted {
            continue;
        }
        let (proof, opening) = build_proof(
            cred,
            &w.keys(),
            rng.random(),
            &m,
            &DeviceAttestation::trusted(),
            0,
            &mut rng,
        )
        .expect("proof");
        let bytes = proof.to_wire();
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let salt = opening.salt();
        let probe_wire = probe.to_wire();
        let forbidden: [&[u8]; 4] = [&wire[..16], &probe_wire[..16], &salt[..], &salt[..8]];
        let raw_leak = forbidden
            .iter()
            .any(|f| bytes.windows(f.len()).any(|win| win == *f));
        let hex_leak = [
            hex::encode(&wire[..16]),
            hex::encode(&probe_wire[..16]),
            hex::encode(salt),
        ]
        .iter()
        .any(|h| text.contains(h.as_str()));
        leaks += usize::from(raw_leak || hex_leak);
    }
    let d = leaks == 0;
    verdict(
        a && b && cc && d,
        format!("(a) dump clean={a}; (b) reject at now==exp={b}; (c) {wins}/100 replays won; (d) {leaks} proofs leaking"),
    )
}
