//! Content-addressed blob storage for credential metadata.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::RwLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("content must not be empty")]
    EmptyContent,
    #[error("no blob stored under {0}")]
    NotFound(Cid),
    #[error("blob under {0} does not hash to its address")]
    Corrupt(Cid),
    #[error("store unavailable: {0}")]
    Unavailable(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("CID must be sha256:<64 lowercase hex chars>")]
pub struct CidParseError;

/// `sha256:<hex digest of the content>`
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cid([u8; 32]);

impl Cid {
    pub fn of(content: &[u8]) -> Self {
        Cid(Sha256::digest(content).into())
    }

    pub fn digest(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Display for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sha256:{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cid({self})")
    }
}

impl FromStr for Cid {
    type Err = CidParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let hex = s.strip_prefix("sha256:").ok_or(CidParseError)?;
        if hex.len() != 64 {
            return Err(CidParseError);
        }
        crate::canonical::decode_hex_array(hex)
            .map(Cid)
            .map_err(|_| CidParseError)
    }
}

impl Serialize for Cid {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Cid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Read/write access to a content-addressed store.
pub trait BlobStore: Send + Sync {
    fn put(&self, content: &[u8]) -> Result<Cid, StoreError>;
    fn get(&self, cid: &Cid) -> Result<Vec<u8>, StoreError>;
}

/// In-process store.
#[derive(Default)]
pub struct MemoryStore {
    blobs: RwLock<HashMap<Cid, Vec<u8>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.blobs.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All stored blobs, ordered by CID.
    pub fn snapshot(&self) -> Vec<(Cid, Vec<u8>)> {
        let mut all: Vec<_> = self
            .blobs
            .read()
            .expect("store lock")
            .iter()
            .map(|(k, v)| (*k, v.clone()))
            .collect();
        all.sort_by_key(|(k, _)| *k);
        all
    }
}

impl BlobStore for MemoryStore {
    fn put(&self, content: &[u8]) -> Result<Cid, StoreError> {
        if content.is_empty() {
            return Err(StoreError::EmptyContent);
        }
        let cid = Cid::of(content);
        self.blobs
            .write()
            .expect("store lock")
            .entry(cid)
            .or_insert_with(|| content.to_vec());
        Ok(cid)
    }

    fn get(&self, cid: &Cid) -> Result<Vec<u8>, StoreError> {
        self.blobs
            .read()
            .expect("store lock")
            .get(cid)
            .cloned()
            .ok_or(StoreError::NotFound(*cid))
    }
}

/// Directory-backed store shared between processes: one file per blob,
/// named by the hex digest.
pub struct FsStore {
    root: PathBuf,
}

impl FsStore {
    pub fn open(root: impl AsRef<Path>) -> io::Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        Ok(FsStore { root })
    }

    fn path_for(&self, cid: &Cid) -> PathBuf {
        self.root.join(hex::encode(cid.digest()))
    }
}

impl BlobStore for FsStore {
    fn put(&self, content: &[u8]) -> Result<Cid, StoreError> {
        if content.is_empty() {
            return Err(StoreError::EmptyContent);
        }
        let cid = Cid::of(content);
        let path = self.path_for(&cid);
        if !path.exists() {
            // write-then-rename so concurrent readers never see a partial blob
            let tmp = self.root.join(format!(
                ".{}.{}",
                hex::encode(cid.digest()),
                std::process::id()
            ));
            let mut f = fs::File::create(&tmp)?;
            f.write_all(content)?;
            f.sync_all()?;
            fs::rename(&tmp, &path)?;
        }
        Ok(cid)
    }

    fn get(&self, cid: &Cid) -> Result<Vec<u8>, StoreError> {
        match fs::read(self.path_for(cid)) {
            Ok(bytes) if Cid::of(&bytes) == *cid => Ok(bytes),
            Ok(_) => Err(StoreError::Corrupt(*cid)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::NotFound(*cid)),
            Err(e) => Err(e.into()),
        }
    }
}
