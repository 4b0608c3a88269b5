//! A data table file and its ledger file, written in lockstep.
//!
//! Every batch goes to the ledger first and the data file second. If the
//! process dies (or the data write fails) in between, the next
//! [`Store::open`] replays the ledger suffix the data file is missing.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::datatable::{render_data_header, render_data_row, ActualView, DataTable};
use crate::error::{Error, Result};
use crate::ledger::{ChainRecord, ConsistencyReport, Ledger, VerificationReport};
use crate::record::{DataRow, UpdateBatch};
use crate::storage::{sync_parent_dir, LedgerFile};

/// Parses a data file for reading. Unlike [`DataTable::parse`], a torn final
/// line is tolerated and reported as the offset where it starts.
fn read_data_file(path: &Path) -> Result<(DataTable, Option<u64>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let torn = (complete < bytes.len()).then_some(complete as u64);
    if complete == 0 {
        return Err(Error::InvalidInput(format!(
            "{}: data file header is missing or torn",
            path.display()
        )));
    }
    let table = DataTable::parse(&bytes[..complete])
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    Ok((table, torn))
}

/// Reads a data table file written by this crate.
pub fn load_data_table(path: impl AsRef<Path>) -> Result<DataTable> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    DataTable::parse(&bytes).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

/// Writes a complete data file in one go. Refuses to replace an existing file.
pub fn write_data_table(path: impl AsRef<Path>, table: &DataTable) -> Result<()> {
    let path = path.as_ref();
    let mut file = create_new(path)?;
    file.write_all(&table.render())
        .and_then(|_| file.sync_all())
        .map_err(|e| Error::io(path, e))?;
    sync_parent_dir(path)
}

fn create_new(path: &Path) -> Result<File> {
    OpenOptions::new()
        .append(true)
        .create_new(true)
        .open(path)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::AlreadyExists => Error::AlreadyExists(path.to_owned()),
            _ => Error::io(path, e),
        })
}

#[derive(Debug)]
struct DataFile {
    path: PathBuf,
    file: File,
}

impl DataFile {
    fn append_rows(&mut self, rows: &[DataRow]) -> Result<()> {
        let bytes: Vec<u8> = rows.iter().flat_map(render_data_row).collect();
        self.append_bytes(&bytes)
    }

    fn append_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        self.file
            .write_all(bytes)
            .and_then(|_| self.file.sync_data())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Where an injected storage fault strikes during [`Store::apply_batch`].
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultPoint {
    /// Before anything is written.
    BeforeLedger,
    /// After the ledger record is durable, before the data rows are written.
    AfterLedger,
    /// After the ledger record, with only part of the data rows written.
    TornData,
}

#[derive(Debug)]
pub struct Store {
    ledger_file: LedgerFile,
    data_file: DataFile,
    ledger: Ledger,
    table: DataTable,
    // Set once a write failed after the ledger committed; reopen to reconcile.
    poisoned: bool,
    fault: Option<FaultPoint>,
}

/// What [`Store::open`] had to do to bring the data file in line with the ledger.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Reconciliation {
    pub rows_replayed: usize,
    pub torn_bytes_dropped: u64,
}

impl Store {
    /// Creates both files. Fails without leaving anything behind if either exists.
    pub fn init(
        ledger_path: impl AsRef<Path>,
        table_path: impl AsRef<Path>,
        name: &str,
    ) -> Result<Self> {
        let (ledger_path, table_path) = (ledger_path.as_ref(), table_path.as_ref());
        let table = DataTable::new(name)?;
        for p in [ledger_path, table_path] {
            if p.exists() {
                return Err(Error::AlreadyExists(p.to_owned()));
            }
        }
        let ledger_file = LedgerFile::create(ledger_path, name)?;
        let data_file = match Self::create_data_file(table_path, name) {
            Ok(f) => f,
            Err(e) => {
                drop(ledger_file);
                let _ = std::fs::remove_file(ledger_path);
                return Err(e);
            }
        };
        Ok(Self {
            ledger_file,
            data_file,
            ledger: Ledger::new(),
            table,
            poisoned: false,
            fault: None,
        })
    }

    fn create_data_file(path: &Path, name: &str) -> Result<DataFile> {
        let mut file = create_new(path)?;
        file.try_lock().map_err(|_| Error::StorageFailure(format!("{} is locked", path.display())))?;
        file.write_all(&render_data_header(name))
            .and_then(|_| file.sync_all())
            .map_err(|e| Error::io(path, e))?;
        sync_parent_dir(path)?;
        Ok(DataFile {
            path: path.to_owned(),
            file,
        })
    }

    /// Opens both files, verifies the chain, and replays any ledger rows the
    /// data file is missing.
    ///
    /// The data file must hold a prefix of the ledger's history; any other
    /// difference is an [`Error::Inconsistent`] and nothing is written.
    pub fn open(ledger_path: impl AsRef<Path>, table_path: impl AsRef<Path>) -> Result<(Self, Reconciliation)> {
        let (ledger_path, table_path) = (ledger_path.as_ref(), table_path.as_ref());
        let (ledger_file, ledger) = LedgerFile::open(ledger_path)?;
        let report = ledger.verify();
        if !report.valid {
            return Err(Error::InvalidLedger(report));
        }
        let file = OpenOptions::new()
            .append(true)
            .open(table_path)
            .map_err(|e| Error::io(table_path, e))?;
        file.try_lock()
            .map_err(|_| Error::StorageFailure(format!("{} is locked", table_path.display())))?;
        let (on_disk, torn) = read_data_file(table_path)?;
        let name = ledger_file.header().table_name.clone();
        if on_disk.name() != name {
            return Err(Error::Inconsistent(format!(
                "ledger protects table {name:?}, data file holds {:?}",
                on_disk.name()
            )));
        }
        let history = ledger.reconstruct_rows()?;
        let held = on_disk.rows();
        if held.len() > history.len() || history[..held.len()] != *held {
            let report = ledger.verify_against_rows(held)?;
            let first = report
                .divergences
                .first()
                .map_or(0, |d| d.position);
            return Err(Error::Inconsistent(format!(
                "data file diverges from ledger history at row {first}"
            )));
        }

        let mut data_file = DataFile {
            path: table_path.to_owned(),
            file,
        };
        let mut rec = Reconciliation::default();
        if let Some(at) = torn {
            let len = data_file.file.metadata().map_err(|e| Error::io(table_path, e))?.len();
            data_file
                .file
                .set_len(at)
                .and_then(|_| data_file.file.sync_all())
                .map_err(|e| Error::io(table_path, e))?;
            rec.torn_bytes_dropped = len - at;
        }
        let missing = &history[held.len()..];
        if !missing.is_empty() {
            data_file.append_rows(missing)?;
            rec.rows_replayed = missing.len();
        }
        let table = DataTable::import_history(&name, history)?;
        Ok((
            Self {
                ledger_file,
                data_file,
                ledger,
                table,
                poisoned: false,
                fault: None,
            },
            rec,
        ))
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn table(&self) -> &DataTable {
        &self.table
    }

    pub fn ledger_path(&self) -> &Path {
        self.ledger_file.path()
    }

    pub fn table_path(&self) -> &Path {
        &self.data_file.path
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, point: FaultPoint) {
        self.fault = Some(point);
    }

    /// Durably applies one data-table operation: one chain record, then the rows.
    ///
    /// On [`Error::StorageFailure`] either nothing was written, or the ledger
    /// record is durable and the rows will be replayed by the next `open`;
    /// in the latter case this handle refuses further writes.
    pub fn apply_batch(&mut self, batch: UpdateBatch) -> Result<ChainRecord> {
        if self.poisoned {
            return Err(Error::StorageFailure(
                "previous write did not complete; reopen the store to reconcile".into(),
            ));
        }
        self.table.check_insertable(&batch)?;
        let report = self.ledger.verify();
        if !report.valid {
            return Err(Error::InvalidLedger(report));
        }
        let fault = self.fault.take();
        if fault == Some(FaultPoint::BeforeLedger) {
            return Err(Error::StorageFailure("injected fault before ledger write".into()));
        }

        let record = ChainRecord::sealed(self.ledger.len() as u64 + 1, batch, self.ledger.tip_hash());
        self.ledger_file.append_record(&record)?;
        self.ledger.append_batch(record.update.clone())?;

        let data_result = match fault {
            Some(FaultPoint::AfterLedger) => {
                Err(Error::StorageFailure("injected fault after ledger write".into()))
            }
            Some(FaultPoint::TornData) => {
                let first = render_data_row(&record.update.records()[0]);
                self.data_file.append_bytes(&first[..first.len() / 2])?;
                Err(Error::StorageFailure("injected torn data write".into()))
            }
            _ => self.data_file.append_rows(record.update.records()),
        };
        if let Err(e) = data_result {
            self.poisoned = true;
            return Err(match e {
                Error::StorageFailure(_) => e,
                other => Error::StorageFailure(other.to_string()),
            });
        }
        self.table.push_batch_unchecked(&record.update);
        Ok(record)
    }

    pub fn verify(&self) -> VerificationReport {
        self.ledger.verify()
    }

    pub fn materialize(&self) -> Result<ActualView> {
        self.ledger.materialize()
    }

    pub fn check_table(&self) -> Result<ConsistencyReport> {
        self.ledger.verify_against_table(&self.table)
    }
}
