//! Decentralised biometric identity.
//!
//! Enrolment and proof-bound authentication against independent verifier
//! nodes with quorum aggregation, content-addressed credential metadata, a
//! hash-chained revocation ledger, per-node hash-chained audit logs, and a
//! deterministic simulation and load harness.

pub mod audit;
pub mod biometric;
pub mod canonical;
pub mod client;
pub mod cluster;
pub mod credential;
pub mod functional;
pub mod gateway;
pub mod identity;
pub mod net;
pub mod node;
pub mod proof;
pub mod sim;
pub mod trust;
