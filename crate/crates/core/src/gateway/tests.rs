use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::json;

use super::*;
use crate::biometric::DEFAULT_NOISE_SIGMA;
use crate::client::{build_auth_request, build_enrollment, capture_probe, Wallet};
use crate::cluster::{InProcessCluster, ViewSettings};
use crate::identity::{generate_identity, seed_from_label};
use crate::node::VerifierNode;
use crate::proof::{DeviceAttestation, RejectReason, Verdict};
use crate::trust::{reason, MemoryStore, SharedLedger};

struct Env {
    cluster: InProcessCluster,
    wallet: Wallet,
    issuer_keys: KeyPair,
    rng: ChaCha20Rng,
}

fn env(n_nodes: usize, quorum: usize) -> Env {
    let mut config = GatewayConfig::for_nodes(n_nodes);
    config.quorum = quorum;
    let cluster = InProcessCluster::new(
        "test",
        n_nodes,
        config,
        ViewSettings::default(),
        Arc::new(MemoryStore::new()),
        Arc::new(SharedLedger::default()),
        b"mac".to_vec(),
        Some([9; 32]),
        0,
    )
    .unwrap();
    let mut rng = ChaCha20Rng::from_seed([1; 32]);
    let mut wallet = Wallet::create(seed_from_label("user"), [11; 32], [12; 32], &mut rng).unwrap();
    let (issuer, issuer_keys) = generate_identity(&seed_from_label("issuer"));
    let req = build_enrollment(
        &wallet.did,
        &issuer_keys,
        &issuer,
        BTreeMap::new(),
        BTreeMap::new(),
        0,
    )
    .unwrap();
    cluster.enroll(&req).unwrap();
    wallet.credential = Some(req.credential);
    Env {
        cluster,
        wallet,
        issuer_keys,
        rng,
    }
}

impl Env {
    fn auth_request(&mut self, now: u64) -> AuthRequest {
        let ch = self.cluster.challenge(&self.wallet.did, now).unwrap();
        let probe = capture_probe(&self.wallet.profile(), DEFAULT_NOISE_SIGMA, &[3; 32]).unwrap();
        build_auth_request(
            &self.wallet,
            &probe,
            0.8,
            &DeviceAttestation::trusted(),
            ch.challenge,
            self.cluster.epoch(),
            &mut self.rng,
        )
        .unwrap()
        .0
    }
}

#[test]
fn challenges_are_distinct_and_expire() {
    let e = env(3, 2);
    let did = e.wallet.did.clone();
    let a = e.cluster.challenge(&did, 0).unwrap();
    let b = e.cluster.challenge(&did, 0).unwrap();
    assert_ne!(a.challenge, b.challenge);
    assert_eq!(a.expires, CHALLENGE_TTL_MS);
    assert!(!e
        .cluster
        .gateway
        .consume_challenge(&a.challenge, CHALLENGE_TTL_MS));
}

#[test]
fn challenge_rate_limit_trips_on_21st() {
    let e = env(3, 2);
    let did = e.wallet.did.clone();
    for i in 0..20 {
        e.cluster.challenge(&did, 1000 + i).unwrap();
    }
    assert!(matches!(
        e.cluster.challenge(&did, 1020),
        Err(GatewayError::RateLimited)
    ));
}

#[test]
fn majority_accept_mints_valid_token() {
    let mut e = env(3, 2);
    let req = e.auth_request(10);
    let resp = e.cluster.authenticate(&req, 20).unwrap();
    assert!(resp.decision.accepted());
    assert_eq!(resp.decision.accept_votes, 3);
    let token = resp.token.unwrap();
    match e.cluster.gateway.validate_token(&token, 20) {
        TokenValidity::Valid { sub, .. } => assert_eq!(sub, e.wallet.did.to_string()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn replayed_challenge_is_refused() {
    let mut e = env(3, 2);
    let req = e.auth_request(10);
    assert!(e
        .cluster
        .authenticate(&req, 20)
        .unwrap()
        .decision
        .accepted());
    assert!(matches!(
        e.cluster.authenticate(&req, 30),
        Err(GatewayError::UnknownChallenge)
    ));
}

#[test]
fn one_timeout_still_accepts_two_do_not() {
    let mut e = env(3, 2);
    e.cluster.set_offline(2, true);
    let req = e.auth_request(10);
    let d = e.cluster.authenticate(&req, 20).unwrap().decision;
    assert!(d.accepted());
    assert_eq!(d.missing_votes, 1);
    e.cluster.set_offline(1, true);
    let req = e.auth_request(30);
    let resp = e.cluster.authenticate(&req, 40).unwrap();
    assert!(!resp.decision.accepted());
    assert!(resp.token.is_none());
    assert_eq!(resp.decision.reason.as_deref(), Some("timeout"));
}

#[test]
fn forged_and_foreign_votes_are_discarded() {
    let mut e = env(3, 2);
    let req = e.auth_request(10);
    let pending = e.cluster.gateway.begin_auth(&req, 10).unwrap();
    let good = e.cluster.nodes[0].handle_verify_task(&pending.task, e.cluster.ledger.as_ref(), 10);
    let mut forged = good.clone();
    forged.node_id = "node-1".into();
    let outsider = VerifierNode::new(
        "node-9",
        KeyPair::from_seed(&[77; 32]),
        e.cluster.store.clone(),
        e.cluster.nodes[0].view(),
    )
    .handle_verify_task(&pending.task, e.cluster.ledger.as_ref(), 10);
    let d = e
        .cluster
        .gateway
        .complete_auth(&pending, vec![good, forged, outsider], 10)
        .decision;
    assert!(!d.accepted());
    assert_eq!(d.votes.len(), 1);
}

#[test]
fn enroll_checks_signature_privacy_and_cid() {
    let e = env(3, 2);
    let (issuer, ik) = generate_identity(&seed_from_label("issuer"));
    let mut req = build_enrollment(
        &e.wallet.did,
        &ik,
        &issuer,
        BTreeMap::new(),
        BTreeMap::new(),
        5,
    )
    .unwrap();
    let resp = e.cluster.enroll(&req).unwrap();
    let stored: CredentialMetadata =
        serde_json::from_slice(&e.cluster.store.get(&resp.metadata_cid).unwrap()).unwrap();
    assert_eq!(stored.credential_id, req.credential.credential_id);

    let mut smuggled = req.clone();
    smuggled.metadata["claims"] = json!({ "embedding": "00" });
    assert!(matches!(
        e.cluster.enroll(&smuggled),
        Err(GatewayError::PrivacyViolation(_))
    ));
    let mut smuggled = req.clone();
    smuggled.metadata["claims"] = json!({ "note": "ab".repeat(crate::biometric::WIRE_LEN) });
    assert!(matches!(
        e.cluster.enroll(&smuggled),
        Err(GatewayError::PrivacyViolation(_))
    ));

    let mut wrong_meta = req.clone();
    wrong_meta.metadata["issued_at"] = json!(6);
    assert!(matches!(
        e.cluster.enroll(&wrong_meta),
        Err(GatewayError::InvalidCredential(_))
    ));

    req.credential.signature[0] ^= 1;
    assert!(matches!(
        e.cluster.enroll(&req),
        Err(GatewayError::InvalidCredential(_))
    ));
    let mut other_key = build_enrollment(
        &e.wallet.did,
        &ik,
        &issuer,
        BTreeMap::new(),
        BTreeMap::new(),
        5,
    )
    .unwrap();
    other_key.issuer_public_key = e.wallet.public_key;
    assert!(matches!(
        e.cluster.enroll(&other_key),
        Err(GatewayError::InvalidCredential(_))
    ));
}

#[test]
fn revocation_requires_issuer_or_subject() {
    let mut e = env(3, 2);
    let cred = e.wallet.credential.clone().unwrap();
    let stranger = KeyPair::from_seed(&[42; 32]);
    let bad = RevokeRequest::sign(
        cred.credential_id,
        cred.metadata_cid,
        reason::KEY_COMPROMISE,
        &stranger,
    );
    assert!(matches!(
        e.cluster.revoke(&bad, 5),
        Err(GatewayError::Unauthorized(_))
    ));
    let mut tampered = RevokeRequest::sign(
        cred.credential_id,
        cred.metadata_cid,
        reason::KEY_COMPROMISE,
        &e.issuer_keys,
    );
    tampered.reason = reason::SUPERSEDED;
    assert!(matches!(
        e.cluster.revoke(&tampered, 5),
        Err(GatewayError::Unauthorized(_))
    ));

    let ok = RevokeRequest::sign(
        cred.credential_id,
        cred.metadata_cid,
        reason::KEY_COMPROMISE,
        &e.issuer_keys,
    );
    e.cluster.revoke(&ok, 5).unwrap();
    assert!(matches!(
        e.cluster.revoke(&ok, 6),
        Err(GatewayError::Ledger(_))
    ));
    e.cluster.refresh_all(6);
    let req = e.auth_request(10);
    let resp = e.cluster.authenticate(&req, 10).unwrap();
    assert!(!resp.decision.accepted());
    assert_eq!(resp.decision.reason.as_deref(), Some("revoked"));
    assert!(resp
        .decision
        .votes
        .iter()
        .all(|v| v.vote == Verdict::Reject(RejectReason::Revoked)));
}

#[test]
fn storage_dump_holds_no_identity_material() {
    let mut e = env(3, 2);
    let req = e.auth_request(10);
    e.cluster.authenticate(&req, 20).unwrap();
    let dump = serde_json::to_string(&e.cluster.gateway.storage_dump(20)).unwrap();
    let did = e.wallet.did.to_string();
    let reference = e.wallet.reference().unwrap();
    for needle in [
        did.as_str(),
        e.wallet.did.identifier(),
        &e.wallet.public_key.to_hex(),
        &hex::encode(reference.to_wire()),
        &hex::encode(&reference.to_wire()[..16]),
    ] {
        assert!(!dump.contains(needle), "dump leaks {needle}");
    }
    let later = e.cluster.gateway.storage_dump(20 + 5_000);
    assert!(later.challenges.is_empty());
    assert!(later.rate_buckets.is_empty());
}

#[test]
fn concurrent_replay_has_exactly_one_winner() {
    let mut e = env(3, 2);
    let req = e.auth_request(10);
    let gw = &e.cluster.gateway;
    let wins: usize = thread::scope(|s| {
        let handles: Vec<_> = (0..100)
            .map(|_| s.spawn(|| gw.consume_challenge(&req.proof.challenge, 11)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap() as usize)
            .sum()
    });
    assert_eq!(wins, 1);
}

#[test]
fn bad_quorum_config_is_rejected() {
    let mut config = GatewayConfig::for_nodes(3);
    config.quorum = 4;
    let nodes = vec![
        RegisteredNode {
            node_id: "a".into(),
            public_key: KeyPair::from_seed(&[1; 32]).public_key()
        };
        3
    ];
    assert!(matches!(
        Gateway::new(config, vec![], nodes, Arc::new(MemoryStore::new()), None),
        Err(GatewayError::Config(_))
    ));
}
