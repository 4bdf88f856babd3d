//! Real-mode networking: wire framing, TCP services, and the load driver.

pub mod client;
pub mod config;
pub mod load;
pub mod local;
pub mod server;
pub mod wire;

pub use client::Connection;
pub use config::{ConfigError, DeployConfig};
pub use load::{run_real_load, LoadError, LocalCluster};
pub use local::{open_local, LocalError};
pub use server::{now_ms, start_gateway, start_node};
pub use wire::{read_frame, write_frame, Envelope, MessageType, WireError, MAX_FRAME_LEN};
