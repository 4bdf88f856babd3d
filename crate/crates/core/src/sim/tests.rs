use super::*;
use crate::audit::AuditPolicy;
use crate::gateway::Outcome;

fn base(seed: u64) -> ScenarioConfig {
    ScenarioConfig::from_json(format!(r#"{{"seed":{seed}}}"#).as_bytes()).unwrap()
}

fn at(at_ms: u64, action: Action) -> TimedAction {
    TimedAction { at_ms, action }
}

fn enroll(subject: &str, count: u32) -> Action {
    Action::Enroll {
        subject: subject.into(),
        count,
    }
}

fn auth(subject: &str) -> Action {
    Action::Auth {
        subject: subject.into(),
        impostor: false,
    }
}

fn revoke(subject: &str) -> Action {
    Action::Revoke {
        subject: subject.into(),
    }
}

fn stale_probe(seed: u64, latency: LatencyModel, mode: CacheMode) -> ScenarioConfig {
    let mut cfg = base(seed);
    cfg.latency = latency;
    cfg.cache_mode = mode;
    cfg.workload = vec![
        at(0, enroll("alice", 1)),
        at(10, auth("alice")),
        at(3000, revoke("alice")),
        at(3001, auth("alice")),
    ];
    cfg
}

#[test]
fn instantaneous_consistency() {
    let mut cfg = stale_probe(1, LatencyModel::Fixed { ms: 0 }, CacheMode::Polling);
    cfg.poll_interval_ms = 0;
    cfg.ttl_ms = 0;
    let r = run_scenario(&cfg).unwrap();
    assert_eq!(r.revocations.len(), 1);
    assert_eq!(r.revocations[0].window_ms, Some(0));
    assert!(r.stale_acceptances.is_empty());
    assert_eq!(r.auths[0].outcome, Outcome::Accept);
    assert_eq!(r.auths[1].outcome, Outcome::Reject);
    assert_eq!(r.auths[1].reason.as_deref(), Some("revoked"));
    assert!(r.violations.is_empty(), "{:?}", r.violations);
}

#[test]
fn reports_are_reproducible() {
    let cfg = stale_probe(
        5,
        LatencyModel::Uniform {
            min_ms: 50,
            max_ms: 150,
        },
        CacheMode::Polling,
    );
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&cfg).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.to_csv(), b.to_csv());
    let back: SimReport = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(back, a);
    let other = run_scenario(&stale_probe(
        6,
        LatencyModel::Uniform {
            min_ms: 50,
            max_ms: 150,
        },
        CacheMode::Polling,
    ))
    .unwrap();
    assert_ne!(a.to_json(), other.to_json());
}

#[test]
fn auth_right_after_revocation_is_stale_and_window_bounded() {
    for seed in 0..100 {
        let r = run_scenario(&stale_probe(
            seed,
            LatencyModel::Fixed { ms: 0 },
            CacheMode::Polling,
        ))
        .unwrap();
        let w = r.revocations[0].window_ms.unwrap();
        assert!(w <= 1500, "seed {seed}: window {w}");
        assert!(!r.stale_acceptances.is_empty(), "seed {seed}");
        for s in &r.stale_acceptances {
            assert!(s.view_height < s.revocation_height);
        }
        assert!(r.violations.is_empty(), "seed {seed}: {:?}", r.violations);
    }
}

#[test]
fn event_driven_never_slower_than_polling() {
    let lat = LatencyModel::Uniform {
        min_ms: 50,
        max_ms: 150,
    };
    for seed in 0..30 {
        let p = run_scenario(&stale_probe(seed, lat, CacheMode::Polling)).unwrap();
        let e = run_scenario(&stale_probe(seed, lat, CacheMode::EventDriven)).unwrap();
        let (pw, ew) = (p.max_window_ms().unwrap(), e.max_window_ms().unwrap());
        assert!(ew <= pw, "seed {seed}: {ew} > {pw}");
        assert!(pw <= p.window_bound_ms);
        assert!(ew <= 150);
    }
}

#[test]
fn naive_audit_diverges_deterministic_does_not() {
    let burst = |seed, policy| {
        let mut cfg = base(seed);
        cfg.latency = LatencyModel::Uniform {
            min_ms: 10,
            max_ms: 150,
        };
        cfg.audit_policy = policy;
        cfg.workload = vec![
            at(0, enroll("u", 20)),
            at(
                1000,
                Action::RevokeBurst {
                    subject: "u".into(),
                    count: 20,
                    spacing_ms: 1,
                },
            ),
        ];
        run_scenario(&cfg).unwrap()
    };
    let naive = (0..10)
        .filter(|&s| burst(s, AuditPolicy::Naive).audit.diverged)
        .count();
    assert!(naive >= 1);
    for s in 0..10 {
        let r = burst(s, AuditPolicy::Deterministic);
        assert!(!r.audit.diverged, "seed {s}");
        assert_eq!(r.audit.entry_counts, vec![40; 3]);
    }
}

#[test]
fn impostor_is_rejected_locally() {
    let mut cfg = base(3);
    cfg.workload = vec![
        at(0, enroll("alice", 1)),
        at(
            5,
            Action::Auth {
                subject: "alice".into(),
                impostor: true,
            },
        ),
    ];
    let r = run_scenario(&cfg).unwrap();
    assert_eq!(r.auths[0].outcome, Outcome::Reject);
    assert_eq!(r.auths[0].reason.as_deref(), Some("match_rejected"));
}

#[test]
fn unilateral_quorum_is_flagged() {
    let mut cfg = base(1);
    cfg.quorum = Some(1);
    let r = run_scenario(&cfg).unwrap();
    assert!(r.unilateral);
    assert_eq!(r.violations.len(), 1);
    let mut single = base(1);
    single.n_nodes = 1;
    assert!(run_scenario(&single).unwrap().unilateral);
    let r = run_scenario(&base(1)).unwrap();
    assert!(!r.unilateral);
    assert!(r.violations.is_empty());
}

fn load(clients: usize, service: u64) -> LoadConfig {
    LoadConfig {
        seed: 1,
        n_nodes: 3,
        quorum: None,
        clients,
        duration_ms: 10_000,
        think_time_ms: 0,
        client_latency: LatencyModel::Fixed { ms: 100 },
        node_latency: LatencyModel::Fixed { ms: 100 },
        gateway_service_ms: service,
        node_service_ms: service,
        node_timeout_ms: 2000,
    }
}

#[test]
fn single_client_matches_analytic_latency() {
    let cfg = load(1, 0);
    let r = run_load_sim(&cfg).unwrap();
    let expected = cfg.analytic_auth_latency_ms().unwrap();
    assert!(r.count > 5);
    for s in &r.samples {
        assert!(s.latency_ms.abs_diff(expected) <= 1, "{}", s.latency_ms);
        assert!(s.accepted);
    }
    let with_service = load(1, 20);
    let r = run_load_sim(&with_service).unwrap();
    assert_eq!(r.p50_ms, with_service.analytic_auth_latency_ms().unwrap());
}

#[test]
fn queueing_spreads_the_tail() {
    let flat = run_load_sim(&load(50, 0)).unwrap();
    assert_eq!(flat.p50_ms, flat.p95_ms);
    assert_eq!(flat.p50_ms, 400);
    let queued = run_load_sim(&load(50, 10)).unwrap();
    assert!(queued.p95_ms > queued.p50_ms);
    assert!(
        queued.p50_ms <= queued.p95_ms
            && queued.p95_ms <= queued.p99_ms
            && queued.p99_ms <= queued.max_ms
    );
    assert!(queued.node_busy_ms.iter().all(|&b| b > 0));
    assert_eq!(queued.node_processed.len(), 3);
}

#[test]
fn emitted_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_load_sim(&load(2, 0)).unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    emit_report(&r, ReportFormat::Csv, &a).unwrap();
    emit_report(&r, ReportFormat::Csv, &b).unwrap();
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_eq!(
        String::from_utf8(bytes).unwrap().lines().count(),
        r.count + 1
    );
}
