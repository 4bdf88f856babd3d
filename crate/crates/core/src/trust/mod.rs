//! In-process stand-ins for the content-addressed metadata store and the
//! revocation chain, plus per-node cached views of the chain.

pub mod ledger;
pub mod store;
pub mod view;

pub use ledger::{
    reason, verify_chain, ChainStatus, FsLedger, LedgerError, LedgerRead, LedgerWrite,
    RevocationBlock, RevocationEvent, RevocationLedger, SharedLedger, VisiblePrefix,
};
pub use store::{BlobStore, Cid, FsStore, MemoryStore, StoreError};
pub use view::{is_revoked, notify_view, refresh_view, CacheMode, LedgerView, RevocationStatus};
