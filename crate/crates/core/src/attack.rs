//! Out-of-band tampering, for exercising detection.
//!
//! These functions rewrite ledger and data files directly, the way an
//! adversary with raw storage access would. They never go through
//! [`LedgerFile`](crate::storage::LedgerFile) and must not run while a writer
//! holds the file open.

use std::path::Path;

use serde::Serialize;

use crate::datatable::DataTable;
use crate::error::{Error, Result};
use crate::hash::Hash;
use crate::ledger::{ChainRecord, FailureKind, Ledger};
use crate::record::{UpdateBatch, UpdateRecord};
use crate::storage::{read_ledger, render_record_line, LedgerHeader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Scenario {
    /// A record before the last one is edited.
    Intermediate,
    /// The last record is edited.
    Last,
    /// Only the data table is edited; the ledger is left alone.
    TableOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttackOutcome {
    pub scenario: Scenario,
    pub detected_by_chain: bool,
    pub detected_by_table_check: bool,
    pub first_invalid_lid: Option<u64>,
    /// Chain records whose hash fields must change for the edit to re-verify.
    pub records_requiring_rewrite: usize,
}

/// Where a tamper should show up, worked out from what was rewritten.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "by", rename_all = "snake_case")]
pub enum PredictedDetection {
    Chain { lid: u64, kind: FailureKind },
    /// The chain re-verifies; comparing against the honest history flags this row (1-based).
    TableCheck { position: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TamperReport {
    pub lid: u64,
    pub record_index: usize,
    pub old_description: Option<String>,
    pub new_description: Option<String>,
    /// lids whose stored hash or prevHash was rewritten.
    pub rehashed: Vec<u64>,
    pub predicted: PredictedDetection,
}

fn check_lid(ledger: &Ledger, lid: u64) -> Result<usize> {
    match usize::try_from(lid) {
        Ok(l) if l >= 1 && l <= ledger.len() => Ok(l - 1),
        _ => Err(Error::LidOutOfRange {
            lid,
            len: ledger.len(),
        }),
    }
}

/// Replaces the description of row `record_index` (1-based) inside chain
/// record `lid`, leaving every stored hash as it was.
pub fn mutate_description(
    ledger: &Ledger,
    lid: u64,
    record_index: usize,
    new_description: Option<String>,
) -> Result<(Ledger, Option<String>)> {
    let idx = check_lid(ledger, lid)?;
    let mut records = ledger.records().to_vec();
    let rows = records[idx].update.records();
    if record_index == 0 || record_index > rows.len() {
        return Err(Error::RecordIndexOutOfRange {
            lid,
            index: record_index,
            len: rows.len(),
        });
    }
    let mut rows = rows.to_vec();
    let target = &rows[record_index - 1];
    let old = target.description().map(str::to_owned);
    rows[record_index - 1] = UpdateRecord::new(target.opid(), target.timestamp(), new_description)?;
    records[idx].update = UpdateBatch::new(rows)?;
    Ok((Ledger::from_records(records), old))
}

/// Recomputes stored hashes for lids `from..=through`, relinking each record
/// to its rewritten predecessor. Returns the lids whose stored fields changed.
pub fn rehash_range(ledger: &Ledger, from: u64, through: u64) -> Result<(Ledger, Vec<u64>)> {
    let start = check_lid(ledger, from)?;
    let end = check_lid(ledger, through)?;
    if end < start {
        return Err(Error::InvalidInput(format!(
            "rewrite range {from}..={through} is empty"
        )));
    }
    let mut records: Vec<ChainRecord> = ledger.records().to_vec();
    let mut changed = Vec::new();
    for i in start..=end {
        let prev: Option<Hash> = if i == start {
            records[i].prev_hash
        } else {
            Some(records[i - 1].hash)
        };
        let before = (records[i].hash, records[i].prev_hash);
        records[i].prev_hash = prev;
        records[i].hash = records[i].recomputed_hash();
        if (records[i].hash, records[i].prev_hash) != before {
            changed.push(records[i].lid);
        }
    }
    Ok((Ledger::from_records(records), changed))
}

fn tampered_description(current: Option<&str>) -> Option<String> {
    Some(match current {
        Some(d) => format!("{d}*"),
        None => "*".to_owned(),
    })
}

/// Edits chain record `k` and re-hashes forward, one record at a time, until
/// the chain verifies again. Returns how many records had to change.
pub fn measure_rewrite_cascade(ledger: &Ledger, k: u64) -> Result<usize> {
    let idx = check_lid(ledger, k)?;
    let current = ledger.records()[idx].update.records()[0].description();
    let (mutated, _) = mutate_description(ledger, k, 1, tampered_description(current))?;
    let original = ledger.records();
    let mut records = mutated.into_records();
    let n = records.len();
    let mut m = idx;
    loop {
        if m > idx {
            records[m].prev_hash = Some(records[m - 1].hash);
        }
        records[m].hash = records[m].recomputed_hash();
        // Only the link into the next untouched record can still be broken.
        let next_ok = m + 1 == n || records[m + 1].prev_hash == Some(records[m].hash);
        if next_ok {
            break;
        }
        m += 1;
    }
    let repaired = Ledger::from_records(records);
    debug_assert!(repaired.verify().valid);
    Ok(repaired
        .records()
        .iter()
        .zip(original)
        .filter(|(a, b)| a.hash != b.hash || a.prev_hash != b.prev_hash)
        .count())
}

/// Runs both checks over a tampered ledger and, for ledger-side scenarios,
/// the cascade an adversary would need for lid `k`.
pub fn assess(
    scenario: Scenario,
    honest: &Ledger,
    tampered: &Ledger,
    table_rows: &[UpdateRecord],
    k: u64,
) -> Result<AttackOutcome> {
    let report = tampered.verify();
    let detected_by_table_check = report.valid && !tampered.verify_against_rows(table_rows)?.consistent;
    let records_requiring_rewrite = match scenario {
        Scenario::TableOnly => 0,
        _ => measure_rewrite_cascade(honest, k)?,
    };
    Ok(AttackOutcome {
        scenario,
        detected_by_chain: !report.valid,
        detected_by_table_check,
        first_invalid_lid: report.first_invalid_lid,
        records_requiring_rewrite,
    })
}

/// 1-based position in the data table of row `record_index` of chain record `lid`.
pub fn row_position(ledger: &Ledger, lid: u64, record_index: usize) -> usize {
    ledger
        .records()
        .iter()
        .take_while(|r| r.lid < lid)
        .map(|r| r.update.len())
        .sum::<usize>()
        + record_index
}

fn write_ledger_raw(path: &Path, header: &LedgerHeader, ledger: &Ledger) -> Result<()> {
    let mut bytes = header.render().into_bytes();
    for r in ledger.records() {
        bytes.extend_from_slice(&render_record_line(r));
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Overwrites one row's description inside a stored ledger line. Stored
/// hashes are untouched, so verification fails at `lid`.
pub fn tamper_update_in_place(
    path: impl AsRef<Path>,
    lid: u64,
    record_index: usize,
    new_description: Option<String>,
) -> Result<TamperReport> {
    let path = path.as_ref();
    let loaded = read_ledger(path)?;
    let (tampered, old) = mutate_description(&loaded.ledger, lid, record_index, new_description.clone())?;
    write_ledger_raw(path, &loaded.header, &tampered)?;
    Ok(TamperReport {
        lid,
        record_index,
        old_description: old,
        new_description,
        rehashed: Vec::new(),
        predicted: PredictedDetection::Chain {
            lid,
            kind: FailureKind::HashMismatch,
        },
    })
}

/// Like [`tamper_update_in_place`], then rewrites stored hash fields for
/// lids `lid..=rewrite_through` so that stretch of the chain is consistent.
pub fn tamper_with_rehash(
    path: impl AsRef<Path>,
    lid: u64,
    record_index: usize,
    new_description: Option<String>,
    rewrite_through: u64,
) -> Result<TamperReport> {
    let path = path.as_ref();
    let loaded = read_ledger(path)?;
    check_lid(&loaded.ledger, rewrite_through)?;
    let (mutated, old) = mutate_description(&loaded.ledger, lid, record_index, new_description.clone())?;
    let (tampered, rehashed) = rehash_range(&mutated, lid, rewrite_through)?;
    write_ledger_raw(path, &loaded.header, &tampered)?;
    let predicted = if rewrite_through < tampered.len() as u64 {
        PredictedDetection::Chain {
            lid: rewrite_through + 1,
            kind: FailureKind::LinkBreak,
        }
    } else {
        PredictedDetection::TableCheck {
            position: row_position(&tampered, lid, record_index),
        }
    };
    Ok(TamperReport {
        lid,
        record_index,
        old_description: old,
        new_description,
        rehashed,
        predicted,
    })
}

/// Overwrites the description of data-file row `position` (1-based) in place.
/// Returns the previous description.
pub fn tamper_table_row_in_place(
    path: impl AsRef<Path>,
    position: usize,
    new_description: Option<String>,
) -> Result<Option<String>> {
    let path = path.as_ref();
    let table = crate::store::load_data_table(path)?;
    if position == 0 || position > table.len() {
        return Err(Error::InvalidInput(format!(
            "row {position} out of range (table holds {} rows)",
            table.len()
        )));
    }
    let mut rows = table.rows().to_vec();
    let old = rows[position - 1].description().map(str::to_owned);
    let r = &rows[position - 1];
    rows[position - 1] = UpdateRecord::new(r.opid(), r.timestamp(), new_description)?;
    let tampered = DataTable::import_history(table.name(), rows)?;
    std::fs::write(path, tampered.render()).map_err(|e| Error::io(path, e))?;
    Ok(old)
}
