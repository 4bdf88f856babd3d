//! C ABI over the bioid core.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `_free`. Every fallible call returns a [`BioidStatus`]; the text
//! of the most recent failure on the calling thread is available from
//! [`bioid_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use bioid_core::audit::{import_entries, verify_log, LogStatus};
use bioid_core::biometric::{make_profile, DEFAULT_NOISE_SIGMA, DEFAULT_THRESHOLD};
use bioid_core::client::{
    build_auth_request, build_enrollment, capture_probe, ClientError, Wallet,
};
use bioid_core::cluster::{InProcessCluster, ViewSettings};
use bioid_core::gateway::{random_mac_key, GatewayConfig, RevokeRequest};
use bioid_core::identity::{generate_identity, seed_from_label};
use bioid_core::proof::{DeviceAttestation, ProofError};
use bioid_core::trust::{verify_chain, ChainStatus, MemoryStore, RevocationLedger, SharedLedger};
use rand::RngExt;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BioidStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Rejected = 4,
    Io = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// A user's wallet: keys, protected template, and credential.
pub struct BioidWallet(Wallet);

/// A gateway and its verifier nodes in this process, over in-memory storage.
pub struct BioidCluster(InProcessCluster);

/// Outcome of one authentication.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BioidAuthResult {
    pub accepted: bool,
    pub accept_votes: usize,
    pub quorum: usize,
    pub n_nodes: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: BioidStatus, msg: impl Into<String>) -> BioidStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> BioidStatus) -> BioidStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(BioidStatus::Panic, "internal panic"),
    }
}

unsafe fn c_str<'a>(s: *const c_char) -> Result<&'a str, BioidStatus> {
    if s.is_null() {
        return Err(fail(BioidStatus::NullArgument, "null string"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(BioidStatus::InvalidUtf8, "string is not UTF-8"))
}

unsafe fn bytes<'a>(data: *const u8, len: usize) -> Result<&'a [u8], BioidStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(fail(BioidStatus::NullArgument, "null buffer"));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

/// Copy `s` plus a NUL into `buf`. `needed` (if non-null) receives the
/// required size including the NUL.
unsafe fn write_str(s: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> BioidStatus {
    let want = s.len() + 1;
    if !needed.is_null() {
        *needed = want;
    }
    if buf.is_null() || len < want {
        return fail(BioidStatus::BufferTooSmall, format!("need {want} bytes"));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, s.len());
    *buf.add(s.len()) = 0;
    BioidStatus::Ok
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Copy the last error message on this thread into `buf`. Returns the size
/// needed including the NUL; nothing is written if `len` is too small.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn bioid_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let mut needed = 0;
        let _ = write_str(&msg, buf, len, &mut needed);
        needed
    })
}

/// Create a wallet. A non-null `label` derives every key from it; null uses
/// OS randomness.
///
/// # Safety
/// `label` must be null or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bioid_wallet_create(
    label: *const c_char,
    out: *mut *mut BioidWallet,
) -> BioidStatus {
    guard(|| {
        if out.is_null() {
            return fail(BioidStatus::NullArgument, "null out");
        }
        let label = if label.is_null() {
            None
        } else {
            Some(try_ffi!(c_str(label)))
        };
        let seed = |kind: &str| -> [u8; 32] {
            match label {
                Some(l) => seed_from_label(&format!("{l}/{kind}")),
                None => rand::rng().random(),
            }
        };
        let mut rng = rand::rng();
        match Wallet::create(
            seed("identity"),
            seed("face"),
            seed("template-key"),
            &mut rng,
        ) {
            Ok(w) => {
                *out = Box::into_raw(Box::new(BioidWallet(w)));
                BioidStatus::Ok
            }
            Err(e) => fail(BioidStatus::InvalidInput, e.to_string()),
        }
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bioid_wallet_load(
    path: *const c_char,
    out: *mut *mut BioidWallet,
) -> BioidStatus {
    guard(|| {
        if out.is_null() {
            return fail(BioidStatus::NullArgument, "null out");
        }
        let path = try_ffi!(c_str(path));
        match Wallet::load(Path::new(path)) {
            Ok(w) => {
                *out = Box::into_raw(Box::new(BioidWallet(w)));
                BioidStatus::Ok
            }
            Err(ClientError::Io(e)) => fail(BioidStatus::Io, e.to_string()),
            Err(e) => fail(BioidStatus::InvalidInput, e.to_string()),
        }
    })
}

/// # Safety
/// `wallet` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bioid_wallet_save(
    wallet: *const BioidWallet,
    path: *const c_char,
) -> BioidStatus {
    guard(|| {
        let Some(w) = wallet.as_ref() else {
            return fail(BioidStatus::NullArgument, "null wallet");
        };
        let path = try_ffi!(c_str(path));
        match w.0.save(Path::new(path)) {
            Ok(()) => BioidStatus::Ok,
            Err(e) => fail(BioidStatus::Io, e.to_string()),
        }
    })
}

/// Write the wallet's DID as a NUL-terminated string.
///
/// # Safety
/// `wallet` must be a live handle; `buf` null or `len` writable bytes;
/// `needed` null or writable.
#[no_mangle]
pub unsafe extern "C" fn bioid_wallet_did(
    wallet: *const BioidWallet,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> BioidStatus {
    guard(|| {
        let Some(w) = wallet.as_ref() else {
            return fail(BioidStatus::NullArgument, "null wallet");
        };
        write_str(&w.0.did.to_string(), buf, len, needed)
    })
}

/// # Safety
/// `wallet` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bioid_wallet_is_enrolled(wallet: *const BioidWallet) -> bool {
    wallet.as_ref().is_some_and(|w| w.0.credential.is_some())
}

/// # Safety
/// `wallet` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bioid_wallet_free(wallet: *mut BioidWallet) {
    if !wallet.is_null() {
        drop(Box::from_raw(wallet));
    }
}

/// Start a gateway with `n_nodes` verifier nodes. `quorum` 0 selects a
/// strict majority.
///
/// # Safety
/// `label` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bioid_cluster_new(
    label: *const c_char,
    n_nodes: usize,
    quorum: usize,
    now_ms: u64,
    out: *mut *mut BioidCluster,
) -> BioidStatus {
    guard(|| {
        if out.is_null() {
            return fail(BioidStatus::NullArgument, "null out");
        }
        let label = try_ffi!(c_str(label));
        let mut config = GatewayConfig::for_nodes(n_nodes);
        if quorum != 0 {
            config.quorum = quorum;
        }
        let cluster = InProcessCluster::new(
            label,
            n_nodes,
            config,
            ViewSettings::default(),
            Arc::new(MemoryStore::new()),
            Arc::new(SharedLedger::new(RevocationLedger::new())),
            random_mac_key(),
            None,
            now_ms,
        );
        match cluster {
            Ok(c) => {
                *out = Box::into_raw(Box::new(BioidCluster(c)));
                BioidStatus::Ok
            }
            Err(e) => fail(BioidStatus::InvalidInput, e.to_string()),
        }
    })
}

/// # Safety
/// `cluster` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bioid_cluster_free(cluster: *mut BioidCluster) {
    if !cluster.is_null() {
        drop(Box::from_raw(cluster));
    }
}

/// Make node `index` stop answering, or bring it back.
///
/// # Safety
/// `cluster` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bioid_cluster_set_offline(
    cluster: *const BioidCluster,
    index: usize,
    offline: bool,
) -> BioidStatus {
    guard(|| {
        let Some(c) = cluster.as_ref() else {
            return fail(BioidStatus::NullArgument, "null cluster");
        };
        if index >= c.0.nodes.len() {
            return fail(BioidStatus::InvalidInput, format!("no node {index}"));
        }
        c.0.set_offline(index, offline);
        BioidStatus::Ok
    })
}

/// Issue a credential from the issuer derived from `issuer_label`, register
/// it, and store it in the wallet.
///
/// # Safety
/// `cluster` and `wallet` must be live handles; `issuer_label` a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bioid_enroll(
    cluster: *const BioidCluster,
    wallet: *mut BioidWallet,
    issuer_label: *const c_char,
    now_ms: u64,
) -> BioidStatus {
    guard(|| {
        let (Some(c), Some(w)) = (cluster.as_ref(), wallet.as_mut()) else {
            return fail(BioidStatus::NullArgument, "null handle");
        };
        let label = try_ffi!(c_str(issuer_label));
        let (issuer_did, issuer_keys) = generate_identity(&seed_from_label(label));
        let req = match build_enrollment(
            &w.0.did,
            &issuer_keys,
            &issuer_did,
            Default::default(),
            Default::default(),
            now_ms,
        ) {
            Ok(r) => r,
            Err(e) => return fail(BioidStatus::InvalidInput, e.to_string()),
        };
        match c.0.enroll(&req) {
            Ok(resp) => {
                w.0.credential = Some(resp.credential);
                BioidStatus::Ok
            }
            Err(e) => fail(BioidStatus::Rejected, format!("{}: {e}", e.code())),
        }
    })
}

/// Capture a probe (of the owner, or of a stranger when `impostor`), prove
/// the match, and authenticate. A denial is `Ok` with `accepted == false`;
/// the reason is then the last error.
///
/// # Safety
/// `cluster` and `wallet` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bioid_authenticate(
    cluster: *const BioidCluster,
    wallet: *const BioidWallet,
    impostor: bool,
    sample_seed: u64,
    now_ms: u64,
    out: *mut BioidAuthResult,
) -> BioidStatus {
    guard(|| {
        let (Some(c), Some(w)) = (cluster.as_ref(), wallet.as_ref()) else {
            return fail(BioidStatus::NullArgument, "null handle");
        };
        if out.is_null() {
            return fail(BioidStatus::NullArgument, "null out");
        }
        let c = &c.0;
        let presenter = if impostor {
            make_profile(&seed_from_label(&format!("ffi/impostor/{sample_seed}")))
        } else {
            w.0.profile()
        };
        let probe = match capture_probe(
            &presenter,
            DEFAULT_NOISE_SIGMA,
            &seed_from_label(&format!("ffi/probe/{sample_seed}")),
        ) {
            Ok(p) => p,
            Err(e) => return fail(BioidStatus::InvalidInput, e.to_string()),
        };
        let ch = match c.challenge(&w.0.did, now_ms) {
            Ok(ch) => ch,
            Err(e) => return fail(BioidStatus::Rejected, format!("{}: {e}", e.code())),
        };
        let mut rng = rand::rng();
        let att = DeviceAttestation::trusted();
        let req = match build_auth_request(
            &w.0,
            &probe,
            DEFAULT_THRESHOLD,
            &att,
            ch.challenge,
            c.epoch(),
            &mut rng,
        ) {
            Ok((req, _)) => req,
            Err(ClientError::Proof(ProofError::MatchRejected)) => {
                *out = BioidAuthResult {
                    n_nodes: c.nodes.len(),
                    quorum: c.gateway.config().quorum,
                    ..Default::default()
                };
                set_error("match_rejected");
                return BioidStatus::Ok;
            }
            Err(e) => return fail(BioidStatus::InvalidInput, e.to_string()),
        };
        match c.authenticate(&req, now_ms) {
            Ok(resp) => {
                let d = &resp.decision;
                *out = BioidAuthResult {
                    accepted: d.accepted(),
                    accept_votes: d.accept_votes,
                    quorum: d.quorum,
                    n_nodes: d.n_nodes,
                };
                set_error(d.reason.clone().unwrap_or_default());
                BioidStatus::Ok
            }
            Err(e) => fail(BioidStatus::Rejected, format!("{}: {e}", e.code())),
        }
    })
}

/// Revoke the wallet's credential, signed by its subject. `out_height`
/// receives the ledger height after the commit.
///
/// # Safety
/// `cluster` and `wallet` must be live handles; `out_height` null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn bioid_revoke(
    cluster: *const BioidCluster,
    wallet: *const BioidWallet,
    reason: u16,
    now_ms: u64,
    out_height: *mut u64,
) -> BioidStatus {
    guard(|| {
        let (Some(c), Some(w)) = (cluster.as_ref(), wallet.as_ref()) else {
            return fail(BioidStatus::NullArgument, "null handle");
        };
        let Some(cred) = w.0.credential.as_ref() else {
            return fail(BioidStatus::InvalidInput, "wallet has no credential");
        };
        let req = RevokeRequest::sign(cred.credential_id, cred.metadata_cid, reason, &w.0.keys());
        match c.0.revoke(&req, now_ms) {
            Ok(block) => {
                if !out_height.is_null() {
                    *out_height = block.index + 1;
                }
                BioidStatus::Ok
            }
            Err(e) => fail(BioidStatus::Rejected, format!("{}: {e}", e.code())),
        }
    })
}

/// Check a line-delimited ledger export. `first_bad` receives -1 when the
/// chain is intact, else the first bad block index (`Rejected`).
///
/// # Safety
/// `data` must point to `len` readable bytes; `first_bad` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bioid_verify_ledger(
    data: *const u8,
    len: usize,
    first_bad: *mut i64,
) -> BioidStatus {
    guard(|| {
        if first_bad.is_null() {
            return fail(BioidStatus::NullArgument, "null out");
        }
        let data = try_ffi!(bytes(data, len));
        let blocks = match RevocationLedger::import_blocks(data) {
            Ok(b) => b,
            Err(e) => return fail(BioidStatus::InvalidInput, e.to_string()),
        };
        match verify_chain(&blocks) {
            ChainStatus::Ok => {
                *first_bad = -1;
                BioidStatus::Ok
            }
            ChainStatus::Broken { first_bad_index } => {
                *first_bad = first_bad_index as i64;
                fail(
                    BioidStatus::Rejected,
                    format!("chain broken at block {first_bad_index}"),
                )
            }
        }
    })
}

/// Check a line-delimited audit export. `first_bad` receives -1 when the
/// chain is intact, else the first bad sequence number (`Rejected`).
///
/// # Safety
/// `data` must point to `len` readable bytes; `first_bad` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bioid_verify_audit_log(
    data: *const u8,
    len: usize,
    first_bad: *mut i64,
) -> BioidStatus {
    guard(|| {
        if first_bad.is_null() {
            return fail(BioidStatus::NullArgument, "null out");
        }
        let data = try_ffi!(bytes(data, len));
        let entries = match import_entries(data) {
            Ok(e) => e,
            Err((line, m)) => return fail(BioidStatus::InvalidInput, format!("line {line}: {m}")),
        };
        match verify_log(&entries) {
            LogStatus::Ok => {
                *first_bad = -1;
                BioidStatus::Ok
            }
            LogStatus::Broken { first_bad_seq } => {
                *first_bad = first_bad_seq as i64;
                fail(
                    BioidStatus::Rejected,
                    format!("log broken at seq {first_bad_seq}"),
                )
            }
        }
    })
}
