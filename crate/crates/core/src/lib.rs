//! Tamper-evident chain tables.
//!
//! A data table is written append-only: inserts, updates and deletions all
//! add rows. Every batch of rows is also appended to a companion ledger as a
//! single record `(lid, hash, prevHash, update)`, where
//! `hash = SHA256(SHA256(lid | update | prevHash))`. Editing any stored row,
//! in the table or in the ledger, breaks either the chain or the agreement
//! between table and ledger.
//!
//! - [`record`]: rows and their canonical encoding
//! - [`ledger`]: hashing, appending, verification, replay
//! - [`datatable`]: the protected table and the coupled in-memory write path
//! - [`storage`]: the append-only ledger file
//! - [`store`]: ledger file plus data file, kept in step on disk
//! - [`attack`]: out-of-band tampering used to exercise detection

pub mod attack;
pub mod datatable;
pub mod error;
pub mod hash;
pub mod ledger;
pub mod record;
pub mod storage;
pub mod store;

pub use datatable::{apply_batch, ActualEntry, ActualView, DataTable};
pub use error::{Error, Result, StorageViolation, ViolationKind};
pub use hash::{double_sha256, Hash};
pub use ledger::{
    compute_hash, hash_preimage, ChainRecord, ConsistencyReport, Divergence, FailureKind, Ledger,
    VerificationReport,
};
pub use record::{canonical_encode_update, DataRow, UpdateBatch, UpdateRecord};
pub use storage::{load_ledger, read_ledger, repair_ledger, LedgerFile, LedgerHeader};
pub use store::{load_data_table, write_data_table, Store};
