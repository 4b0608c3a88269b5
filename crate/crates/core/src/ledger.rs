//! The chain table itself: hash-chained records, verification, and replay.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::datatable::{ActualView, DataTable};
use crate::error::{Error, Result};
use crate::hash::{double_sha256, Hash};
use crate::record::{canonical_encode_update, DataRow, UpdateBatch, UpdateRecord};

const FIELD_SEPARATOR: u8 = b'|';

/// One chain table row: `(lid, hash, prevHash, update)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub lid: u64,
    pub hash: Hash,
    #[serde(rename = "prevHash")]
    pub prev_hash: Option<Hash>,
    pub update: UpdateBatch,
}

impl ChainRecord {
    /// Builds a record whose hash is computed from the other fields.
    pub fn sealed(lid: u64, update: UpdateBatch, prev_hash: Option<Hash>) -> Self {
        let hash = compute_hash(lid, &update, prev_hash.as_ref());
        Self {
            lid,
            hash,
            prev_hash,
            update,
        }
    }

    pub fn recomputed_hash(&self) -> Hash {
        compute_hash(self.lid, &self.update, self.prev_hash.as_ref())
    }
}

/// Bytes fed to the double hash: `lid | update | prevHash-hex`, with an empty
/// prevHash field for the genesis record.
pub fn hash_preimage(lid: u64, update: &UpdateBatch, prev_hash: Option<&Hash>) -> Vec<u8> {
    let update = canonical_encode_update(update);
    let mut buf = Vec::with_capacity(20 + update.len() + 66);
    buf.extend_from_slice(lid.to_string().as_bytes());
    buf.push(FIELD_SEPARATOR);
    buf.extend_from_slice(&update);
    buf.push(FIELD_SEPARATOR);
    if let Some(prev) = prev_hash {
        buf.extend_from_slice(prev.to_hex().as_bytes());
    }
    buf
}

/// `SHA256(SHA256(lid, update, prevHash))` over [`hash_preimage`].
pub fn compute_hash(lid: u64, update: &UpdateBatch, prev_hash: Option<&Hash>) -> Hash {
    double_sha256(&hash_preimage(lid, update, prev_hash))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailureKind {
    /// The stored hash does not match the recomputed one.
    HashMismatch,
    /// prevHash does not equal the preceding record's hash.
    LinkBreak,
    /// lids are not exactly 1, 2, ..., n.
    LidGap,
    /// prevHash is present on lid 1 or absent on a later record.
    GenesisViolation,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureKind::HashMismatch => "HASH_MISMATCH",
            FailureKind::LinkBreak => "LINK_BREAK",
            FailureKind::LidGap => "LID_GAP",
            FailureKind::GenesisViolation => "GENESIS_VIOLATION",
        })
    }
}

/// Outcome of a chain scan. `first_invalid_lid` is the position-based lid
/// (the lid the record at that position should carry).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub valid: bool,
    pub records_checked: usize,
    pub first_invalid_lid: Option<u64>,
    pub failure_kind: Option<FailureKind>,
}

impl VerificationReport {
    fn ok(records_checked: usize) -> Self {
        Self {
            valid: true,
            records_checked,
            first_invalid_lid: None,
            failure_kind: None,
        }
    }

    fn failed(records_checked: usize, lid: u64, kind: FailureKind) -> Self {
        Self {
            valid: false,
            records_checked,
            first_invalid_lid: Some(lid),
            failure_kind: Some(kind),
        }
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.first_invalid_lid, self.failure_kind) {
            (Some(lid), Some(kind)) => write!(f, "first invalid lid: {lid} ({kind})"),
            _ => write!(f, "chain ok ({} records)", self.records_checked),
        }
    }
}

/// One row where the ledger's history and a data table disagree. `position`
/// is 1-based; a missing side means one sequence is shorter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    pub position: usize,
    pub expected: Option<UpdateRecord>,
    pub found: Option<UpdateRecord>,
}

impl Divergence {
    pub fn opid(&self) -> u64 {
        self.expected
            .as_ref()
            .or(self.found.as_ref())
            .map(UpdateRecord::opid)
            .expect("a divergence has at least one side")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConsistencyReport {
    pub consistent: bool,
    pub divergences: Vec<Divergence>,
}

/// An ordered sequence of chain records.
///
/// A ledger may hold records that do not verify (it is how tampered files are
/// represented once loaded); [`Ledger::append_batch`] refuses to extend one.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    records: Vec<ChainRecord>,
    // Length of the prefix already known to verify.
    verified: usize,
}

impl PartialEq for Ledger {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
    }
}

impl Eq for Ledger {}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Wraps records as-is, without checking them.
    pub fn from_records(records: Vec<ChainRecord>) -> Self {
        Self {
            records,
            verified: 0,
        }
    }

    pub fn records(&self) -> &[ChainRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ChainRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&ChainRecord> {
        self.records.last()
    }

    pub fn tip_hash(&self) -> Option<Hash> {
        self.last().map(|r| r.hash)
    }

    /// The record stored at position `lid` (1-based).
    pub fn get(&self, lid: u64) -> Option<&ChainRecord> {
        let idx = usize::try_from(lid).ok()?.checked_sub(1)?;
        self.records.get(idx)
    }

    /// Appends exactly one record chaining `batch` onto the current tip.
    pub fn append_batch(&mut self, batch: UpdateBatch) -> Result<&ChainRecord> {
        let report = self.verify_from(self.verified);
        if !report.valid {
            return Err(Error::InvalidLedger(report));
        }
        let lid = self.records.len() as u64 + 1;
        let record = ChainRecord::sealed(lid, batch, self.tip_hash());
        self.records.push(record);
        self.verified = self.records.len();
        Ok(self.records.last().expect("just pushed"))
    }

    /// Scans the chain and reports the first record breaking any chain rule.
    pub fn verify(&self) -> VerificationReport {
        self.verify_from(0)
    }

    fn verify_from(&self, start: usize) -> VerificationReport {
        for (idx, record) in self.records.iter().enumerate().skip(start) {
            let expected_lid = idx as u64 + 1;
            if record.lid != expected_lid {
                return VerificationReport::failed(idx + 1, expected_lid, FailureKind::LidGap);
            }
            let prev = match idx {
                0 => None,
                _ => Some(&self.records[idx - 1].hash),
            };
            match (prev, record.prev_hash.as_ref()) {
                (None, Some(_)) | (Some(_), None) => {
                    return VerificationReport::failed(
                        idx + 1,
                        expected_lid,
                        FailureKind::GenesisViolation,
                    );
                }
                (Some(p), Some(stored)) if p != stored => {
                    return VerificationReport::failed(idx + 1, expected_lid, FailureKind::LinkBreak);
                }
                _ => {}
            }
            if record.recomputed_hash() != record.hash {
                return VerificationReport::failed(idx + 1, expected_lid, FailureKind::HashMismatch);
            }
        }
        VerificationReport::ok(self.records.len())
    }

    fn require_valid(&self) -> Result<()> {
        let report = self.verify();
        if report.valid {
            Ok(())
        } else {
            Err(Error::InvalidLedger(report))
        }
    }

    fn rows(&self) -> impl Iterator<Item = &UpdateRecord> {
        self.records.iter().flat_map(|r| r.update.records())
    }

    /// The full row history: every batch concatenated in lid order.
    pub fn reconstruct_rows(&self) -> Result<Vec<DataRow>> {
        self.require_valid()?;
        Ok(self.rows().cloned().collect())
    }

    /// Rebuilds the protected data table from the ledger alone.
    pub fn reconstruct(&self, name: &str) -> Result<DataTable> {
        DataTable::import_history(name, self.reconstruct_rows()?)
    }

    /// Latest replayed row per opid, as the table's current state.
    pub fn materialize(&self) -> Result<ActualView> {
        self.require_valid()?;
        Ok(ActualView::from_rows(self.rows()))
    }

    /// Compares the ledger's history against the rows a data table actually holds.
    pub fn verify_against_rows(&self, rows: &[DataRow]) -> Result<ConsistencyReport> {
        self.require_valid()?;
        let mut expected = self.rows();
        let mut found = rows.iter();
        let mut divergences = Vec::new();
        let mut position = 0;
        loop {
            position += 1;
            match (expected.next(), found.next()) {
                (None, None) => break,
                (e, f) if e == f => {}
                (e, f) => divergences.push(Divergence {
                    position,
                    expected: e.cloned(),
                    found: f.cloned(),
                }),
            }
        }
        Ok(ConsistencyReport {
            consistent: divergences.is_empty(),
            divergences,
        })
    }

    pub fn verify_against_table(&self, table: &DataTable) -> Result<ConsistencyReport> {
        self.verify_against_rows(table.rows())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(opid: u64, ts: &str, desc: &str) -> UpdateRecord {
        UpdateRecord::with_description(opid, ts, desc).unwrap()
    }

    fn batch(rows: &[(u64, &str, &str)]) -> UpdateBatch {
        UpdateBatch::new(rows.iter().map(|&(o, t, d)| rec(o, t, d)).collect()).unwrap()
    }

    fn events_ledger() -> Ledger {
        let mut ledger = Ledger::new();
        ledger.append_batch(batch(&[(1, "t1", "opt1")])).unwrap();
        ledger
            .append_batch(batch(&[(2, "t2", "opt2"), (3, "t3", "opt3")]))
            .unwrap();
        ledger.append_batch(batch(&[(1, "t4", "opt4")])).unwrap();
        ledger
    }

    #[test]
    fn preimage_layout() {
        let b = batch(&[(1, "t1", "opt1")]);
        assert_eq!(
            hash_preimage(1, &b, None),
            br#"1|[{"opid":1,"timestamp":"t1","description":"opt1"}]|"#
        );
        let prev = compute_hash(1, &b, None);
        let with_prev = hash_preimage(12, &b, Some(&prev));
        assert!(with_prev.starts_with(b"12|"));
        assert!(with_prev.ends_with(prev.to_hex().as_bytes()));
    }

    #[test]
    fn compute_hash_is_deterministic_and_content_sensitive() {
        let b = batch(&[(1, "t1", "opt1")]);
        assert_eq!(compute_hash(1, &b, None), compute_hash(1, &b, None));
        assert_ne!(compute_hash(1, &b, None), compute_hash(2, &b, None));
        let prev = compute_hash(1, &b, None);
        assert_ne!(compute_hash(2, &b, None), compute_hash(2, &b, Some(&prev)));
    }

    #[test]
    fn append_links_records() {
        let ledger = events_ledger();
        let r = ledger.records();
        assert_eq!(r.iter().map(|r| r.lid).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(r[0].prev_hash, None);
        assert_eq!(r[1].prev_hash, Some(r[0].hash));
        assert_eq!(r[2].prev_hash, Some(r[1].hash));
        assert!(ledger.verify().valid);
    }

    #[test]
    fn empty_ledger_verifies() {
        let report = Ledger::new().verify();
        assert!(report.valid);
        assert_eq!(report.first_invalid_lid, None);
    }

    #[test]
    fn mutated_update_is_a_hash_mismatch() {
        let mut records = events_ledger().into_records();
        records[1].update = batch(&[(2, "t2", "opt5"), (3, "t3", "opt3")]);
        let report = Ledger::from_records(records).verify();
        assert!(!report.valid);
        assert_eq!(report.first_invalid_lid, Some(2));
        assert_eq!(report.failure_kind, Some(FailureKind::HashMismatch));
    }

    #[test]
    fn each_failure_kind_is_reported() {
        let base = events_ledger().into_records();

        let mut r = base.clone();
        r[2].lid = 4;
        let rep = Ledger::from_records(r).verify();
        assert_eq!((rep.first_invalid_lid, rep.failure_kind), (Some(3), Some(FailureKind::LidGap)));

        let mut r = base.clone();
        r[0].prev_hash = Some(r[2].hash);
        let rep = Ledger::from_records(r).verify();
        assert_eq!(
            (rep.first_invalid_lid, rep.failure_kind),
            (Some(1), Some(FailureKind::GenesisViolation))
        );

        let mut r = base.clone();
        r[1].prev_hash = None;
        let rep = Ledger::from_records(r).verify();
        assert_eq!(
            (rep.first_invalid_lid, rep.failure_kind),
            (Some(2), Some(FailureKind::GenesisViolation))
        );

        let mut r = base.clone();
        r[2].prev_hash = Some(r[0].hash);
        let rep = Ledger::from_records(r).verify();
        assert_eq!((rep.first_invalid_lid, rep.failure_kind), (Some(3), Some(FailureKind::LinkBreak)));
    }

    #[test]
    fn append_onto_broken_chain_is_refused() {
        let mut records = events_ledger().into_records();
        records[0].update = batch(&[(1, "t1", "tampered")]);
        let mut ledger = Ledger::from_records(records);
        let before = ledger.clone();
        let err = ledger.append_batch(batch(&[(9, "t9", "x")])).unwrap_err();
        assert!(matches!(err, Error::InvalidLedger(ref r) if r.first_invalid_lid == Some(1)));
        assert_eq!(ledger, before);
        assert!(matches!(ledger.materialize(), Err(Error::InvalidLedger(_))));
        assert!(matches!(ledger.reconstruct_rows(), Err(Error::InvalidLedger(_))));
    }

    #[test]
    fn reconstruct_yields_full_history() {
        let rows = events_ledger().reconstruct_rows().unwrap();
        assert_eq!(
            rows,
            vec![rec(1, "t1", "opt1"), rec(2, "t2", "opt2"), rec(3, "t3", "opt3"), rec(1, "t4", "opt4")]
        );
        assert!(Ledger::new().reconstruct_rows().unwrap().is_empty());
    }

    #[test]
    fn verify_against_rows_reports_each_divergence() {
        let ledger = events_ledger();
        let honest = ledger.reconstruct_rows().unwrap();
        assert!(ledger.verify_against_rows(&honest).unwrap().consistent);

        let mut tampered = honest.clone();
        tampered[1] = rec(2, "t2", "opt5");
        let report = ledger.verify_against_rows(&tampered).unwrap();
        assert_eq!(report.divergences.len(), 1);
        assert_eq!(report.divergences[0].position, 2);
        assert_eq!(report.divergences[0].opid(), 2);

        let short = &honest[..3];
        let report = ledger.verify_against_rows(short).unwrap();
        assert_eq!(report.divergences.len(), 1);
        assert_eq!(report.divergences[0].position, 4);
        assert_eq!(report.divergences[0].found, None);

        let mut long = honest.clone();
        long.push(rec(5, "t5", "extra"));
        let report = ledger.verify_against_rows(&long).unwrap();
        assert_eq!(report.divergences[0].position, 5);
        assert_eq!(report.divergences[0].expected, None);
    }
}
