use std::fmt;
use std::path::PathBuf;

use serde::Serialize;

use crate::ledger::VerificationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which write principle or on-disk integrity rule a storage operation ran into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationKind {
    NonAppendWrite,
    MultiRecordWrite,
    LidGap,
    PrevHashMismatch,
    CorruptRecord,
    HeaderMismatch,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::NonAppendWrite => "NON_APPEND_WRITE",
            ViolationKind::MultiRecordWrite => "MULTI_RECORD_WRITE",
            ViolationKind::LidGap => "LID_GAP",
            ViolationKind::PrevHashMismatch => "PREV_HASH_MISMATCH",
            ViolationKind::CorruptRecord => "CORRUPT_RECORD",
            ViolationKind::HeaderMismatch => "HEADER_MISMATCH",
        }
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A rejected storage operation. Nothing was written when one of these is returned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StorageViolation {
    pub kind: ViolationKind,
    /// 1-based line number in the file, when the violation is tied to one.
    pub line: Option<usize>,
    pub detail: String,
}

impl StorageViolation {
    pub fn new(kind: ViolationKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            line: None,
            detail: detail.into(),
        }
    }

    pub fn at_line(kind: ViolationKind, line: usize, detail: impl Into<String>) -> Self {
        Self {
            kind,
            line: Some(line),
            detail: detail.into(),
        }
    }
}

impl fmt::Display for StorageViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{} at line {}: {}", self.kind, line, self.detail),
            None => write!(f, "{}: {}", self.kind, self.detail),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed batch: {0}")]
    MalformedBatch(String),

    #[error("invalid ledger: {0}")]
    InvalidLedger(VerificationReport),

    #[error("duplicate (opid, timestamp) key at positions {positions:?}")]
    DuplicateKey { positions: Vec<usize> },

    #[error("lid {lid} out of range (ledger holds {len} records)")]
    LidOutOfRange { lid: u64, len: usize },

    #[error("record index {index} out of range for lid {lid} (batch holds {len} records)")]
    RecordIndexOutOfRange { lid: u64, index: usize, len: usize },

    #[error("{0}")]
    Storage(StorageViolation),

    #[error("{} already exists", .0.display())]
    AlreadyExists(PathBuf),

    #[error("data table and ledger disagree: {0}")]
    Inconsistent(String),

    #[error("storage failure: {0}")]
    StorageFailure(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn violation(kind: ViolationKind, detail: impl Into<String>) -> Self {
        Error::Storage(StorageViolation::new(kind, detail))
    }

    /// The violation kind, when this error came from the guarded storage layer.
    pub fn violation_kind(&self) -> Option<ViolationKind> {
        match self {
            Error::Storage(v) => Some(v.kind),
            _ => None,
        }
    }
}
