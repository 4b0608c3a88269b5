//! Durable, append-only ledger files.
//!
//! Layout (UTF-8, `\n` terminated lines only):
//!
//! ```text
//! CHAINTABLE-LEDGER v1 <table-name> double-sha256-v1
//! <lid> <hash-hex> <prevHash-hex | -> <canonical update>
//! ...
//! ```
//!
//! [`LedgerFile`] is the only writer. It exposes a single-record append and
//! nothing that could rewrite, reorder, or remove a stored line. A line that
//! lacks its terminating newline was torn by an interrupted write.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::datatable::validate_name;
use crate::error::{Error, Result, StorageViolation, ViolationKind};
use crate::hash::Hash;
use crate::ledger::{ChainRecord, Ledger};
use crate::record::UpdateBatch;

pub const LEDGER_MAGIC: &str = "CHAINTABLE-LEDGER";
pub const LEDGER_VERSION: &str = "v1";
pub const HASH_ALGORITHM: &str = "double-sha256-v1";

const ABSENT_PREV: &str = "-";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerHeader {
    pub version: String,
    pub table_name: String,
    pub algorithm: String,
}

impl LedgerHeader {
    pub fn new(table_name: &str) -> Self {
        Self {
            version: LEDGER_VERSION.to_owned(),
            table_name: table_name.to_owned(),
            algorithm: HASH_ALGORITHM.to_owned(),
        }
    }

    pub fn render(&self) -> String {
        format!(
            "{LEDGER_MAGIC} {} {} {}\n",
            self.version, self.table_name, self.algorithm
        )
    }

    fn parse(line: &str) -> Result<Self, StorageViolation> {
        let parts: Vec<&str> = line.split(' ').collect();
        let mismatch = |detail: String| StorageViolation::at_line(ViolationKind::HeaderMismatch, 1, detail);
        match parts.as_slice() {
            [LEDGER_MAGIC, LEDGER_VERSION, name, HASH_ALGORITHM] if validate_name(name).is_ok() => {
                Ok(Self::new(name))
            }
            [LEDGER_MAGIC, version, _, _] if *version != LEDGER_VERSION => {
                Err(mismatch(format!("unsupported version {version:?}")))
            }
            [LEDGER_MAGIC, _, _, algorithm] if *algorithm != HASH_ALGORITHM => {
                Err(mismatch(format!("unsupported hash algorithm {algorithm:?}")))
            }
            _ => Err(mismatch(format!("unrecognized header {line:?}"))),
        }
    }
}

/// Renders one record as its on-disk line, including the trailing newline.
pub fn render_record_line(record: &ChainRecord) -> Vec<u8> {
    let prev = record
        .prev_hash
        .map_or_else(|| ABSENT_PREV.to_owned(), |h| h.to_hex());
    let mut line = format!("{} {} {} ", record.lid, record.hash, prev).into_bytes();
    line.extend_from_slice(&record.update.encode_canonical());
    line.push(b'\n');
    line
}

/// Parses one line (without its newline) as a chain record.
pub fn parse_record_line(line: &[u8]) -> std::result::Result<ChainRecord, String> {
    let text = std::str::from_utf8(line).map_err(|e| format!("not UTF-8: {e}"))?;
    let mut fields = text.splitn(4, ' ');
    let (Some(lid), Some(hash), Some(prev), Some(update)) =
        (fields.next(), fields.next(), fields.next(), fields.next())
    else {
        return Err("expected four space-separated fields".into());
    };
    let lid: u64 = lid
        .parse()
        .ok()
        .filter(|n: &u64| *n >= 1 && n.to_string() == lid)
        .ok_or_else(|| format!("bad lid {lid:?}"))?;
    let hash: Hash = hash.parse().map_err(|e| format!("bad hash: {e}"))?;
    let prev_hash = match prev {
        ABSENT_PREV => None,
        hex => Some(hex.parse::<Hash>().map_err(|e| format!("bad prevHash: {e}"))?),
    };
    let update = UpdateBatch::parse_canonical(update.as_bytes()).map_err(|e| e.to_string())?;
    Ok(ChainRecord {
        lid,
        hash,
        prev_hash,
        update,
    })
}

/// A ledger read from disk, together with its header.
#[derive(Debug, Clone)]
pub struct LoadedLedger {
    pub header: LedgerHeader,
    pub ledger: Ledger,
    pub byte_len: u64,
}

struct ParseFailure {
    violation: StorageViolation,
    // Set when the failure is a torn final line; the offset where that line starts.
    torn_tail_at: Option<u64>,
}

fn parse_ledger_bytes(bytes: &[u8]) -> std::result::Result<LoadedLedger, ParseFailure> {
    let mut header = None;
    let mut records = Vec::new();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < bytes.len() || line_no == 0 {
        line_no += 1;
        let rest = &bytes[offset..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(ParseFailure {
                violation: StorageViolation::at_line(
                    ViolationKind::CorruptRecord,
                    line_no,
                    "partial line (missing newline terminator)",
                ),
                torn_tail_at: Some(offset as u64),
            });
        };
        let line = &rest[..nl];
        if line_no == 1 {
            let text = std::str::from_utf8(line).map_err(|_| ParseFailure {
                violation: StorageViolation::at_line(ViolationKind::HeaderMismatch, 1, "header is not UTF-8"),
                torn_tail_at: None,
            })?;
            header = Some(LedgerHeader::parse(text).map_err(|violation| ParseFailure {
                violation,
                torn_tail_at: None,
            })?);
        } else {
            let record = parse_record_line(line).map_err(|detail| ParseFailure {
                violation: StorageViolation::at_line(ViolationKind::CorruptRecord, line_no, detail),
                torn_tail_at: None,
            })?;
            records.push(record);
        }
        offset += nl + 1;
    }
    Ok(LoadedLedger {
        header: header.expect("header parsed on line 1"),
        ledger: Ledger::from_records(records),
        byte_len: bytes.len() as u64,
    })
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

/// Reads every record of a ledger file. Chain validity is not checked here:
/// a tampered but well-formed file loads fine so it can be verified.
pub fn read_ledger(path: impl AsRef<Path>) -> Result<LoadedLedger> {
    let path = path.as_ref();
    parse_ledger_bytes(&read_all(path)?).map_err(|f| Error::Storage(f.violation))
}

pub fn load_ledger(path: impl AsRef<Path>) -> Result<Ledger> {
    read_ledger(path).map(|l| l.ledger)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RepairOutcome {
    /// Nothing to repair; the file loaded cleanly.
    Clean { records: usize },
    /// A torn final line was cut off.
    DroppedTornTail { records: usize, bytes_removed: u64 },
}

/// Drops a torn final record line left behind by an interrupted append.
///
/// Only an unterminated last line after an intact header is removed; any
/// other damage is returned as an error and the file is left untouched.
pub fn repair_ledger(path: impl AsRef<Path>) -> Result<RepairOutcome> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    match parse_ledger_bytes(&bytes) {
        Ok(loaded) => Ok(RepairOutcome::Clean {
            records: loaded.ledger.len(),
        }),
        Err(ParseFailure {
            torn_tail_at: Some(at),
            violation,
        }) if violation.line.is_some_and(|l| l > 1) => {
            let loaded = parse_ledger_bytes(&bytes[..at as usize]).map_err(|f| Error::Storage(f.violation))?;
            let file = OpenOptions::new()
                .write(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            lock_exclusive(&file, path)?;
            file.set_len(at)
                .and_then(|_| file.sync_all())
                .map_err(|e| Error::io(path, e))?;
            Ok(RepairOutcome::DroppedTornTail {
                records: loaded.ledger.len(),
                bytes_removed: bytes.len() as u64 - at,
            })
        }
        Err(f) => Err(Error::Storage(f.violation)),
    }
}

fn lock_exclusive(file: &File, path: &Path) -> Result<()> {
    file.try_lock().map_err(|e| match e {
        std::fs::TryLockError::WouldBlock => Error::StorageFailure(format!(
            "{} is locked by another writer",
            path.display()
        )),
        std::fs::TryLockError::Error(e) => Error::io(path, e),
    })
}

pub(crate) fn sync_parent_dir(path: &Path) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    File::open(parent)
        .and_then(|d| d.sync_all())
        .map_err(|e| Error::io(parent, e))
}

/// Exclusive append handle on a ledger file.
///
/// Holds an advisory lock for its lifetime; a second writer on the same path
/// fails to open.
#[derive(Debug)]
pub struct LedgerFile {
    path: PathBuf,
    header: LedgerHeader,
    file: File,
    records: u64,
    tip: Option<Hash>,
    end: u64,
}

impl LedgerFile {
    pub fn create(path: impl AsRef<Path>, table_name: &str) -> Result<Self> {
        let path = path.as_ref();
        validate_name(table_name)?;
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create_new(true)
            .open(path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => Error::AlreadyExists(path.to_owned()),
                _ => Error::io(path, e),
            })?;
        lock_exclusive(&file, path)?;
        let header = LedgerHeader::new(table_name);
        let rendered = header.render();
        file.write_all(rendered.as_bytes())
            .and_then(|_| file.sync_all())
            .map_err(|e| Error::io(path, e))?;
        sync_parent_dir(path)?;
        Ok(Self {
            path: path.to_owned(),
            header,
            file,
            records: 0,
            tip: None,
            end: rendered.len() as u64,
        })
    }

    /// Opens an existing file for appending. The file must parse completely;
    /// a torn tail has to be repaired first.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Ledger)> {
        let path = path.as_ref();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        lock_exclusive(&file, path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        let loaded = parse_ledger_bytes(&bytes).map_err(|f| Error::Storage(f.violation))?;
        let handle = Self {
            path: path.to_owned(),
            header: loaded.header,
            file,
            records: loaded.ledger.len() as u64,
            tip: loaded.ledger.tip_hash(),
            end: loaded.byte_len,
        };
        Ok((handle, loaded.ledger))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn header(&self) -> &LedgerHeader {
        &self.header
    }

    pub fn record_count(&self) -> u64 {
        self.records
    }

    pub fn tip_hash(&self) -> Option<Hash> {
        self.tip
    }

    /// Appends exactly one record at end-of-file and syncs it to disk.
    ///
    /// The record must carry the next lid and link to the stored tip; anything
    /// else is rejected before a byte is written.
    pub fn append_record(&mut self, record: &ChainRecord) -> Result<()> {
        let expected = self.records + 1;
        if record.lid != expected {
            let what = if record.lid <= self.records {
                "would overwrite or reorder an existing record"
            } else {
                "would skip lids"
            };
            return Err(Error::violation(
                ViolationKind::LidGap,
                format!("expected lid {expected}, got {} ({what})", record.lid),
            ));
        }
        if record.prev_hash != self.tip {
            let show = |h: Option<Hash>| h.map_or_else(|| ABSENT_PREV.to_owned(), |h| h.to_hex());
            return Err(Error::violation(
                ViolationKind::PrevHashMismatch,
                format!(
                    "lid {} links to {}, stored tip is {}",
                    record.lid,
                    show(record.prev_hash),
                    show(self.tip)
                ),
            ));
        }
        let on_disk = self
            .file
            .metadata()
            .map_err(|e| Error::io(&self.path, e))?
            .len();
        if on_disk != self.end {
            return Err(Error::violation(
                ViolationKind::NonAppendWrite,
                format!(
                    "file length changed outside this writer ({} bytes expected, {on_disk} found)",
                    self.end
                ),
            ));
        }
        let line = render_record_line(record);
        if let Err(e) = self.file.write_all(&line).and_then(|_| self.file.sync_data()) {
            // Best effort: drop whatever part of the line made it out.
            let _ = self.file.set_len(self.end);
            return Err(Error::io(&self.path, e));
        }
        self.end += line.len() as u64;
        self.records += 1;
        self.tip = Some(record.hash);
        Ok(())
    }
}
