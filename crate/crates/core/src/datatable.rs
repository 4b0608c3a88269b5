//! The protected append-only data table and its coupled write path.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ledger::{ChainRecord, Ledger};
use crate::record::{DataRow, UpdateBatch, UpdateRecord};

pub const DATA_MAGIC: &str = "CHAINTABLE-DATA";
pub const DATA_VERSION: &str = "v1";

/// Table and ledger names end up in space-separated headers.
pub(crate) fn validate_name(name: &str) -> Result<()> {
    if name.is_empty() || name.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Err(Error::InvalidInput(format!(
            "table name {name:?} must be non-empty and contain no whitespace"
        )));
    }
    Ok(())
}

/// Full append-only row history of a data table.
#[derive(Debug, Clone)]
pub struct DataTable {
    name: String,
    rows: Vec<DataRow>,
    keys: HashMap<(u64, String), usize>,
}

impl PartialEq for DataTable {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.rows == other.rows
    }
}

impl Eq for DataTable {}

impl DataTable {
    pub fn new(name: &str) -> Result<Self> {
        validate_name(name)?;
        Ok(Self {
            name: name.to_owned(),
            rows: Vec::new(),
            keys: HashMap::new(),
        })
    }

    /// Loads an existing row history, preserving order.
    ///
    /// Every row that repeats an earlier `(opid, timestamp)` is reported
    /// together with the row it collides with (1-based positions).
    pub fn import_history(name: &str, rows: Vec<DataRow>) -> Result<Self> {
        let mut table = Self::new(name)?;
        let mut duplicates = Vec::new();
        for (pos, row) in rows.iter().enumerate() {
            let key = (row.opid(), row.timestamp().to_owned());
            if let Some(&first) = table.keys.get(&key) {
                duplicates.push(first + 1);
                duplicates.push(pos + 1);
            } else {
                table.keys.insert(key, pos);
            }
        }
        if !duplicates.is_empty() {
            duplicates.sort_unstable();
            duplicates.dedup();
            return Err(Error::DuplicateKey {
                positions: duplicates,
            });
        }
        table.rows = rows;
        Ok(table)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rows(&self) -> &[DataRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains_key(&self, opid: u64, timestamp: &str) -> bool {
        self.keys.contains_key(&(opid, timestamp.to_owned()))
    }

    /// Checks that none of the batch's keys already exist in the table.
    pub fn check_insertable(&self, batch: &UpdateBatch) -> Result<()> {
        let positions: Vec<usize> = batch
            .records()
            .iter()
            .enumerate()
            .filter(|(_, r)| self.contains_key(r.opid(), r.timestamp()))
            .map(|(i, _)| i + 1)
            .collect();
        if positions.is_empty() {
            Ok(())
        } else {
            Err(Error::DuplicateKey { positions })
        }
    }

    // Callers must have run `check_insertable` first.
    pub(crate) fn push_batch_unchecked(&mut self, batch: &UpdateBatch) {
        for row in batch.records() {
            self.keys
                .insert((row.opid(), row.timestamp().to_owned()), self.rows.len());
            self.rows.push(row.clone());
        }
    }

    /// Latest appended row per opid.
    pub fn actual_view(&self) -> ActualView {
        ActualView::from_rows(self.rows.iter())
    }

    /// Data file rendering: header line, then one canonical row per line.
    pub fn render(&self) -> Vec<u8> {
        let mut out = render_data_header(&self.name);
        for row in &self.rows {
            out.extend_from_slice(&render_data_row(row));
        }
        out
    }

    /// Parses a complete data file. Every line, including the last, must end with `\n`.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| Error::InvalidInput(format!("data file is not UTF-8: {e}")))?;
        let Some(body) = text.strip_suffix('\n') else {
            return Err(Error::InvalidInput("data file does not end with a newline".into()));
        };
        let mut lines = body.split('\n');
        let header = lines.next().unwrap_or_default();
        let name = parse_data_header(header)?;
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = UpdateRecord::parse_canonical(line.as_bytes()).map_err(|e| {
                Error::InvalidInput(format!("data file line {}: {e}", i + 2))
            })?;
            rows.push(row);
        }
        Self::import_history(name, rows)
    }
}

pub(crate) fn render_data_header(name: &str) -> Vec<u8> {
    format!("{DATA_MAGIC} {DATA_VERSION} {name}\n").into_bytes()
}

pub(crate) fn render_data_row(row: &DataRow) -> Vec<u8> {
    let mut line = row.encode_canonical();
    line.push(b'\n');
    line
}

fn parse_data_header(line: &str) -> Result<&str> {
    let mut parts = line.split(' ');
    match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(DATA_MAGIC), Some(DATA_VERSION), Some(name), None) if validate_name(name).is_ok() => {
            Ok(name)
        }
        _ => Err(Error::InvalidInput(format!("bad data file header {line:?}"))),
    }
}

/// Applies one data-table operation: the batch rows go into the table and
/// exactly one chain record goes into the ledger, or nothing changes.
pub fn apply_batch(
    table: &mut DataTable,
    ledger: &mut Ledger,
    batch: UpdateBatch,
) -> Result<ChainRecord> {
    table.check_insertable(&batch)?;
    let record = ledger.append_batch(batch)?.clone();
    table.push_batch_unchecked(&record.update);
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActualEntry {
    pub opid: u64,
    pub timestamp: String,
    pub description: Option<String>,
    pub deleted: bool,
}

/// Current state of the table: one entry per opid, ordered by opid.
/// Deleted opids stay as tombstones.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ActualView {
    pub entries: Vec<ActualEntry>,
}

impl ActualView {
    /// Replays rows in order; the last row seen for an opid wins.
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a DataRow>) -> Self {
        let mut latest: BTreeMap<u64, &DataRow> = BTreeMap::new();
        for row in rows {
            latest.insert(row.opid(), row);
        }
        let entries = latest
            .into_values()
            .map(|row| ActualEntry {
                opid: row.opid(),
                timestamp: row.timestamp().to_owned(),
                description: row.description().map(str::to_owned),
                deleted: row.is_deletion(),
            })
            .collect();
        Self { entries }
    }

    pub fn get(&self, opid: u64) -> Option<&ActualEntry> {
        self.entries
            .binary_search_by_key(&opid, |e| e.opid)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries that are not tombstones.
    pub fn live(&self) -> impl Iterator<Item = &ActualEntry> {
        self.entries.iter().filter(|e| !e.deleted)
    }
}
