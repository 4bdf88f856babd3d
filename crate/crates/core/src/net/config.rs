//! Deployment configuration (TOML) shared by `gateway run`, `node run`, and
//! `load run`, with `key=value` overrides.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::AuditPolicy;
use crate::gateway::{
    default_quorum, random_mac_key, ExpiryPolicy, GatewayConfig, CHALLENGE_TTL_MS,
    DEFAULT_CAPACITY, DEFAULT_NODE_TIMEOUT_MS, DEFAULT_REFILL_PER_S, DEFAULT_TOKEN_LIFETIME_S,
};
use crate::sim::LatencyModel;
use crate::trust::view::{DEFAULT_POLL_INTERVAL_MS, DEFAULT_TTL_MS};
use crate::trust::CacheMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("bad override {0:?}: expected key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn d_gateway_listen() -> SocketAddr {
    "127.0.0.1:7700".parse().expect("literal")
}
fn d_node_listen() -> Vec<SocketAddr> {
    (1..=3)
        .map(|i| SocketAddr::from(([127, 0, 0, 1], 7700 + i)))
        .collect()
}
fn d_timeout() -> u64 {
    DEFAULT_NODE_TIMEOUT_MS
}
fn d_challenge_ttl() -> u64 {
    CHALLENGE_TTL_MS
}
fn d_token_lifetime() -> u64 {
    DEFAULT_TOKEN_LIFETIME_S
}
fn d_capacity() -> u64 {
    DEFAULT_CAPACITY
}
fn d_refill() -> u64 {
    DEFAULT_REFILL_PER_S
}
fn d_mac_key() -> String {
    "random".into()
}
fn d_poll() -> u64 {
    DEFAULT_POLL_INTERVAL_MS
}
fn d_ttl() -> u64 {
    DEFAULT_TTL_MS
}
fn d_data_dir() -> PathBuf {
    PathBuf::from("bioid-data")
}
fn d_label() -> String {
    "local".into()
}
fn d_clients() -> usize {
    50
}
fn d_duration() -> u64 {
    30_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySection {
    #[serde(default = "d_gateway_listen")]
    pub listen: SocketAddr,
    /// Defaults to a strict majority of the nodes.
    #[serde(default)]
    pub quorum: Option<usize>,
    #[serde(default = "d_timeout")]
    pub node_timeout_ms: u64,
    #[serde(default = "d_challenge_ttl")]
    pub challenge_ttl_ms: u64,
    #[serde(default = "d_token_lifetime")]
    pub token_lifetime_s: u64,
    #[serde(default = "d_capacity")]
    pub rate_capacity: u64,
    #[serde(default = "d_refill")]
    pub rate_refill_per_s: u64,
    /// `random`, `hex:<key>`, `env:<VAR>` (hex), or `file:<path>` (raw bytes).
    #[serde(default = "d_mac_key")]
    pub mac_key: String,
    #[serde(default)]
    pub expiry_policy: ExpiryPolicy,
}

impl Default for GatewaySection {
    fn default() -> Self {
        toml::from_str("").expect("all fields defaulted")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodesSection {
    #[serde(default = "d_node_listen")]
    pub listen: Vec<SocketAddr>,
    #[serde(default = "d_poll")]
    pub poll_interval_ms: u64,
    #[serde(default = "d_ttl")]
    pub ttl_ms: u64,
    #[serde(default)]
    pub cache_mode: CacheMode,
}

impl Default for NodesSection {
    fn default() -> Self {
        toml::from_str("").expect("all fields defaulted")
    }
}

/// One-way delays injected in real mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencySection {
    /// Client to gateway, applied on receipt and before each reply.
    #[serde(default)]
    pub client_hop: LatencyModel,
    /// Gateway to node, applied by the node on receipt and before replying.
    #[serde(default)]
    pub node_hop: LatencyModel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_clients")]
    pub clients: usize,
    #[serde(default = "d_duration")]
    pub duration_ms: u64,
    #[serde(default)]
    pub think_time_ms: u64,
}

impl Default for LoadSection {
    fn default() -> Self {
        toml::from_str("").expect("all fields defaulted")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeployConfig {
    /// Shared blob store and ledger live here.
    #[serde(default = "d_data_dir")]
    pub data_dir: PathBuf,
    /// Node signing keys are derived from this label and the node index.
    #[serde(default = "d_label")]
    pub cluster_label: String,
    #[serde(default)]
    pub audit_policy: AuditPolicy,
    #[serde(default)]
    pub gateway: GatewaySection,
    #[serde(default)]
    pub nodes: NodesSection,
    #[serde(default)]
    pub latency: LatencySection,
    #[serde(default)]
    pub load: LoadSection,
}

impl Default for DeployConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields defaulted")
    }
}

/// Set `dotted.key = value` in a TOML table. The value is parsed as a TOML
/// literal, falling back to a plain string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(spec.into()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(spec.into()));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_owned()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(spec.into()))?;
    }
    cur.insert(last.to_owned(), value);
    Ok(())
}

impl DeployConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: DeployConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_path_buf(),
                source,
            })?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.listen.len()
    }

    pub fn quorum(&self) -> usize {
        self.gateway
            .quorum
            .unwrap_or_else(|| default_quorum(self.n_nodes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.n_nodes();
        if n == 0 {
            return Err(ConfigError::Invalid(
                "nodes.listen must name at least one node".into(),
            ));
        }
        let q = self.quorum();
        if q == 0 || q > n {
            return Err(ConfigError::Invalid(format!(
                "quorum {q} out of range for {n} nodes"
            )));
        }
        for m in [self.latency.client_hop, self.latency.node_hop] {
            m.validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.load.clients == 0 {
            return Err(ConfigError::Invalid(
                "load.clients must be at least 1".into(),
            ));
        }
        self.mac_key()?;
        Ok(())
    }

    pub fn gateway_config(&self) -> GatewayConfig {
        GatewayConfig {
            quorum: self.quorum(),
            node_timeout_ms: self.gateway.node_timeout_ms,
            challenge_ttl_ms: self.gateway.challenge_ttl_ms,
            token_lifetime_s: self.gateway.token_lifetime_s,
            rate_capacity: self.gateway.rate_capacity,
            rate_refill_per_s: self.gateway.rate_refill_per_s,
            expiry_policy: self.gateway.expiry_policy,
        }
    }

    /// Resolve the MAC key source.
    pub fn mac_key(&self) -> Result<Vec<u8>, ConfigError> {
        let src = self.gateway.mac_key.as_str();
        let bad = |m: String| ConfigError::Invalid(format!("mac_key: {m}"));
        let key = if src == "random" {
            random_mac_key()
        } else if let Some(h) = src.strip_prefix("hex:") {
            hex::decode(h).map_err(|e| bad(e.to_string()))?
        } else if let Some(var) = src.strip_prefix("env:") {
            let v = std::env::var(var)
                .map_err(|_| bad(format!("environment variable {var} not set")))?;
            hex::decode(v.trim()).map_err(|e| bad(e.to_string()))?
        } else if let Some(p) = src.strip_prefix("file:") {
            std::fs::read(p).map_err(|e| bad(e.to_string()))?
        } else {
            return Err(bad(format!("unknown source {src:?}")));
        };
        if key.len() < 16 {
            return Err(bad("key shorter than 16 bytes".into()));
        }
        Ok(key)
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.data_dir.join("ledger.log")
    }

    pub fn store_path(&self) -> PathBuf {
        self.data_dir.join("store")
    }

    pub fn audit_path(&self, node_id: &str) -> PathBuf {
        self.data_dir.join("audit").join(format!("{node_id}.log"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = DeployConfig::from_toml("", &[]).unwrap();
        assert_eq!(cfg.n_nodes(), 3);
        assert_eq!(cfg.quorum(), 2);
        assert_eq!(cfg.gateway.node_timeout_ms, 2000);
        let cfg = DeployConfig::from_toml(
            "[gateway]\nquorum = 3\n",
            &[
                "gateway.quorum=1".into(),
                "latency.node_hop={kind=\"fixed\",ms=5}".into(),
                "data_dir=/tmp/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.quorum(), 1);
        assert_eq!(cfg.latency.node_hop, LatencyModel::Fixed { ms: 5 });
        assert_eq!(cfg.data_dir, PathBuf::from("/tmp/x"));
        let again = DeployConfig::from_toml(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_errors() {
        assert!(DeployConfig::from_toml("bogus = 1", &[]).is_err());
        assert!(DeployConfig::from_toml("[gateway]\nbogus = 1", &[]).is_err());
        assert!(DeployConfig::from_toml("", &["gateway.quorum=9".into()]).is_err());
        assert!(DeployConfig::from_toml("", &["noequals".into()]).is_err());
        assert!(DeployConfig::from_toml("", &["gateway.mac_key=hex:00".into()]).is_err());
        let hexkey = "ab".repeat(32);
        let cfg = DeployConfig::from_toml("", &[format!("gateway.mac_key=hex:{hexkey}")]).unwrap();
        assert_eq!(cfg.mac_key().unwrap(), vec![0xab; 32]);
    }
}
