//! Append-only, hash-chained revocation ledger.
//!
//! Height is the number of committed blocks. A credential revoked in block
//! `i` is visible to any view at height `i + 1` or above.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{self, hex_bytes};
use crate::credential::CredentialId;

pub mod reason {
    pub const UNSPECIFIED: u16 = 0;
    pub const KEY_COMPROMISE: u16 = 1;
    pub const SUPERSEDED: u16 = 4;
    pub const CESSATION: u16 = 5;
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("credential {0} is already revoked")]
    AlreadyRevoked(CredentialId),
    #[error("line {line}: {message}")]
    Import { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevocationEvent {
    pub credential_id: CredentialId,
    pub reason: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevocationBlock {
    pub index: u64,
    #[serde(with = "hex_bytes")]
    pub prev_hash: [u8; 32],
    pub timestamp: u64,
    pub events: Vec<RevocationEvent>,
    #[serde(with = "hex_bytes")]
    pub block_hash: [u8; 32],
}

#[derive(Serialize)]
struct BlockBody<'a> {
    index: u64,
    #[serde(with = "hex_bytes")]
    prev_hash: [u8; 32],
    timestamp: u64,
    events: &'a [RevocationEvent],
}

impl RevocationBlock {
    pub fn compute_hash(&self) -> [u8; 32] {
        canonical::canonical_digest(&BlockBody {
            index: self.index,
            prev_hash: self.prev_hash,
            timestamp: self.timestamp,
            events: &self.events,
        })
        .expect("block body is canonicalizable")
    }

    pub fn to_line(&self) -> Vec<u8> {
        canonical::to_canonical(self).expect("block is canonicalizable")
    }

    /// Parse one exported line; the line must be in canonical form.
    pub fn from_line(line: &[u8]) -> Result<Self, String> {
        let block: RevocationBlock = serde_json::from_slice(line).map_err(|e| e.to_string())?;
        if block.to_line() != line {
            return Err("non-canonical encoding".into());
        }
        Ok(block)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChainStatus {
    Ok,
    Broken { first_bad_index: u64 },
}

pub fn verify_chain(blocks: &[RevocationBlock]) -> ChainStatus {
    let mut prev = [0u8; 32];
    for (i, block) in blocks.iter().enumerate() {
        let i = i as u64;
        if block.index != i || block.prev_hash != prev || block.compute_hash() != block.block_hash {
            return ChainStatus::Broken { first_bad_index: i };
        }
        prev = block.block_hash;
    }
    ChainStatus::Ok
}

/// Read access to a ledger prefix.
pub trait LedgerRead {
    fn height(&self) -> u64;
    /// Blocks with index in `[start, height)`.
    fn blocks_from(&self, start: u64) -> Vec<RevocationBlock>;
}

#[derive(Debug, Clone, Default)]
pub struct RevocationLedger {
    blocks: Vec<RevocationBlock>,
    revoked_at: HashMap<CredentialId, u64>,
}

impl RevocationLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn blocks(&self) -> &[RevocationBlock] {
        &self.blocks
    }

    /// Height at which `id` became revoked, if it has been.
    pub fn revoked_height(&self, id: &CredentialId) -> Option<u64> {
        self.revoked_at.get(id).copied()
    }

    pub fn head_hash(&self) -> [u8; 32] {
        self.blocks
            .last()
            .map(|b| b.block_hash)
            .unwrap_or([0u8; 32])
    }

    pub fn append_revocation(
        &mut self,
        credential_id: CredentialId,
        reason: u16,
        now_ms: u64,
    ) -> Result<RevocationBlock, LedgerError> {
        if self.revoked_at.contains_key(&credential_id) {
            return Err(LedgerError::AlreadyRevoked(credential_id));
        }
        let mut block = RevocationBlock {
            index: self.blocks.len() as u64,
            prev_hash: self.head_hash(),
            timestamp: now_ms,
            events: vec![RevocationEvent {
                credential_id,
                reason,
            }],
            block_hash: [0u8; 32],
        };
        block.block_hash = block.compute_hash();
        self.revoked_at.insert(credential_id, block.index + 1);
        self.blocks.push(block.clone());
        Ok(block)
    }

    pub fn verify(&self) -> ChainStatus {
        verify_chain(&self.blocks)
    }

    /// Line-delimited canonical export, one block per line.
    pub fn export(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend_from_slice(&b.to_line());
            out.push(b'\n');
        }
        out
    }

    /// Parse an export without checking the chain; use `verify_chain` on the
    /// result. Duplicate revocations across blocks are reported as errors.
    pub fn import_blocks(data: &[u8]) -> Result<Vec<RevocationBlock>, LedgerError> {
        let mut blocks = Vec::new();
        for (i, line) in data.split(|b| *b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let block =
                RevocationBlock::from_line(line).map_err(|message| LedgerError::Import {
                    line: i + 1,
                    message,
                })?;
            blocks.push(block);
        }
        Ok(blocks)
    }

    /// Rebuild a ledger from blocks; the chain must verify.
    pub fn from_blocks(blocks: Vec<RevocationBlock>) -> Result<Self, LedgerError> {
        if let ChainStatus::Broken { first_bad_index } = verify_chain(&blocks) {
            return Err(LedgerError::Import {
                line: first_bad_index as usize + 1,
                message: "hash chain broken".into(),
            });
        }
        let mut revoked_at = HashMap::new();
        for b in &blocks {
            for e in &b.events {
                if revoked_at.insert(e.credential_id, b.index + 1).is_some() {
                    return Err(LedgerError::AlreadyRevoked(e.credential_id));
                }
            }
        }
        Ok(RevocationLedger { blocks, revoked_at })
    }
}

impl LedgerRead for RevocationLedger {
    fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    fn blocks_from(&self, start: u64) -> Vec<RevocationBlock> {
        self.blocks
            .get(start as usize..)
            .map(<[_]>::to_vec)
            .unwrap_or_default()
    }
}

/// The prefix of a ledger that has propagated to some reader.
pub struct VisiblePrefix<'a> {
    pub ledger: &'a RevocationLedger,
    pub height: u64,
}

impl LedgerRead for VisiblePrefix<'_> {
    fn height(&self) -> u64 {
        self.height.min(self.ledger.height())
    }

    fn blocks_from(&self, start: u64) -> Vec<RevocationBlock> {
        let end = self.height() as usize;
        self.ledger
            .blocks
            .get(start as usize..end)
            .map(<[_]>::to_vec)
            .unwrap_or_default()
    }
}

/// Append access for the single ledger writer.
pub trait LedgerWrite: LedgerRead + Send + Sync {
    fn commit_revocation(
        &self,
        credential_id: CredentialId,
        reason: u16,
        now_ms: u64,
    ) -> Result<RevocationBlock, LedgerError>;
}

/// In-memory ledger behind a lock, for in-process clusters.
#[derive(Debug, Default)]
pub struct SharedLedger(RwLock<RevocationLedger>);

impl SharedLedger {
    pub fn new(ledger: RevocationLedger) -> Self {
        SharedLedger(RwLock::new(ledger))
    }

    pub fn snapshot(&self) -> RevocationLedger {
        self.0.read().expect("ledger lock").clone()
    }
}

impl LedgerRead for SharedLedger {
    fn height(&self) -> u64 {
        self.0.read().expect("ledger lock").height()
    }

    fn blocks_from(&self, start: u64) -> Vec<RevocationBlock> {
        self.0.read().expect("ledger lock").blocks_from(start)
    }
}

impl LedgerWrite for SharedLedger {
    fn commit_revocation(
        &self,
        credential_id: CredentialId,
        reason: u16,
        now_ms: u64,
    ) -> Result<RevocationBlock, LedgerError> {
        self.0
            .write()
            .expect("ledger lock")
            .append_revocation(credential_id, reason, now_ms)
    }
}

/// File-backed ledger shared between processes. One writer process appends
/// lines; any number of readers parse complete lines.
pub struct FsLedger {
    path: PathBuf,
    writer: Mutex<Option<RevocationLedger>>,
}

impl FsLedger {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        if !path.exists() {
            fs::write(&path, b"")?;
        }
        Ok(FsLedger {
            path,
            writer: Mutex::new(None),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Current on-disk state. A trailing partial line is ignored.
    pub fn load(&self) -> Result<RevocationLedger, LedgerError> {
        let data = fs::read(&self.path)?;
        let complete = match data.iter().rposition(|b| *b == b'\n') {
            Some(pos) => &data[..=pos],
            None => &[][..],
        };
        RevocationLedger::from_blocks(RevocationLedger::import_blocks(complete)?)
    }

    pub fn append_revocation(
        &self,
        credential_id: CredentialId,
        reason: u16,
        now_ms: u64,
    ) -> Result<RevocationBlock, LedgerError> {
        let mut guard = self.writer.lock().expect("ledger writer lock");
        if guard.is_none() {
            *guard = Some(self.load()?);
        }
        let ledger = guard.as_mut().expect("loaded above");
        let block = ledger.append_revocation(credential_id, reason, now_ms)?;
        let mut line = block.to_line();
        line.push(b'\n');
        let mut f = OpenOptions::new().append(true).open(&self.path)?;
        f.write_all(&line)?;
        f.sync_data()?;
        Ok(block)
    }
}

impl LedgerRead for FsLedger {
    fn height(&self) -> u64 {
        self.load().map(|l| l.height()).unwrap_or(0)
    }

    fn blocks_from(&self, start: u64) -> Vec<RevocationBlock> {
        self.load()
            .map(|l| l.blocks_from(start))
            .unwrap_or_default()
    }
}

impl LedgerWrite for FsLedger {
    fn commit_revocation(
        &self,
        credential_id: CredentialId,
        reason: u16,
        now_ms: u64,
    ) -> Result<RevocationBlock, LedgerError> {
        self.append_revocation(credential_id, reason, now_ms)
    }
}
