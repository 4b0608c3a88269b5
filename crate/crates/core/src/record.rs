//! Data-table row payloads and the canonical byte encoding that gets hashed.
//!
//! The encoding is compact JSON: an array of objects whose keys always appear
//! in the order `opid`, `timestamp`, `description`, with a deleted row carrying
//! an explicit `null` description. The same bytes are written to disk, piped
//! in on the command line, and fed into the chain hash.

use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// One row appended to the data table: `(opid, timestamp, description)`.
///
/// A `None` description is a deletion tombstone.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawRecord")]
pub struct UpdateRecord {
    opid: u64,
    timestamp: String,
    description: Option<String>,
}

/// Rows of the data table have the same shape as the updates that produce them.
pub type DataRow = UpdateRecord;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    opid: u64,
    timestamp: String,
    // Explicit `null` is required for deletions; a missing key is rejected.
    #[serde(deserialize_with = "required_nullable")]
    description: Option<String>,
}

fn required_nullable<'de, D: Deserializer<'de>>(de: D) -> Result<Option<String>, D::Error> {
    Option::<String>::deserialize(de)
}

impl TryFrom<RawRecord> for UpdateRecord {
    type Error = Error;

    fn try_from(raw: RawRecord) -> Result<Self> {
        UpdateRecord::new(raw.opid, raw.timestamp, raw.description)
    }
}

impl UpdateRecord {
    pub fn new(
        opid: u64,
        timestamp: impl Into<String>,
        description: Option<String>,
    ) -> Result<Self> {
        let timestamp = timestamp.into();
        if opid == 0 {
            return Err(Error::MalformedBatch("opid must be >= 1".into()));
        }
        if timestamp.is_empty() {
            return Err(Error::MalformedBatch("timestamp must be non-empty".into()));
        }
        if timestamp.chars().any(char::is_control) {
            return Err(Error::MalformedBatch(format!(
                "timestamp {timestamp:?} contains control characters"
            )));
        }
        Ok(Self {
            opid,
            timestamp,
            description,
        })
    }

    /// Shorthand for a row carrying a description.
    pub fn with_description(
        opid: u64,
        timestamp: impl Into<String>,
        description: impl Into<String>,
    ) -> Result<Self> {
        Self::new(opid, timestamp, Some(description.into()))
    }

    /// Shorthand for a deletion row.
    pub fn deletion(opid: u64, timestamp: impl Into<String>) -> Result<Self> {
        Self::new(opid, timestamp, None)
    }

    pub fn opid(&self) -> u64 {
        self.opid
    }

    pub fn timestamp(&self) -> &str {
        &self.timestamp
    }

    pub fn description(&self) -> Option<&str> {
        self.description.as_deref()
    }

    pub fn is_deletion(&self) -> bool {
        self.description.is_none()
    }

    /// The data table's primary key.
    pub fn key(&self) -> (u64, &str) {
        (self.opid, &self.timestamp)
    }

    /// Canonical single-object rendering, e.g. `{"opid":1,"timestamp":"t1","description":"opt1"}`.
    pub fn encode_canonical(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("record serialization is infallible")
    }

    /// Parses one canonical object. Rejects any bytes that do not re-encode identically.
    pub fn parse_canonical(bytes: &[u8]) -> Result<Self> {
        let record: UpdateRecord = serde_json::from_slice(bytes)
            .map_err(|e| Error::MalformedBatch(e.to_string()))?;
        if record.encode_canonical() != bytes {
            return Err(Error::MalformedBatch("record is not canonically encoded".into()));
        }
        Ok(record)
    }
}

/// The rows written by one data-table operation; stored as one chain record.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct UpdateBatch(Vec<UpdateRecord>);

impl UpdateBatch {
    pub fn new(records: Vec<UpdateRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::MalformedBatch("batch must hold at least one record".into()));
        }
        let mut seen: HashMap<(u64, &str), usize> = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if let Some(first) = seen.insert(r.key(), i) {
                return Err(Error::MalformedBatch(format!(
                    "records {} and {} share (opid, timestamp) = ({}, {:?})",
                    first + 1,
                    i + 1,
                    r.opid,
                    r.timestamp
                )));
            }
        }
        Ok(Self(records))
    }

    pub fn single(record: UpdateRecord) -> Self {
        Self(vec![record])
    }

    pub fn records(&self) -> &[UpdateRecord] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; a batch holds at least one record.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_records(self) -> Vec<UpdateRecord> {
        self.0
    }

    pub fn encode_canonical(&self) -> Vec<u8> {
        serde_json::to_vec(&self.0).expect("batch serialization is infallible")
    }

    /// Parses any JSON array of record objects (whitespace allowed).
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let records: Vec<UpdateRecord> = serde_json::from_slice(bytes)
            .map_err(|e| Error::MalformedBatch(e.to_string()))?;
        Self::new(records)
    }

    /// Parses a batch and requires the input to be byte-identical to its canonical form.
    pub fn parse_canonical(bytes: &[u8]) -> Result<Self> {
        let batch = Self::from_json(bytes)?;
        if batch.encode_canonical() != bytes {
            return Err(Error::MalformedBatch("batch is not canonically encoded".into()));
        }
        Ok(batch)
    }
}

impl<'de> Deserialize<'de> for UpdateBatch {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let records = Vec::<UpdateRecord>::deserialize(de)?;
        UpdateBatch::new(records).map_err(serde::de::Error::custom)
    }
}

/// The canonical bytes of `batch`; the `update` component of the chain hash preimage.
pub fn canonical_encode_update(batch: &UpdateBatch) -> Vec<u8> {
    batch.encode_canonical()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(opid: u64, ts: &str, desc: &str) -> UpdateRecord {
        UpdateRecord::with_description(opid, ts, desc).unwrap()
    }

    #[test]
    fn encodes_single_record_batch() {
        let batch = UpdateBatch::single(rec(1, "t1", "opt1"));
        assert_eq!(
            canonical_encode_update(&batch),
            br#"[{"opid":1,"timestamp":"t1","description":"opt1"}]"#
        );
    }

    #[test]
    fn encodes_two_record_batch_in_order() {
        let batch = UpdateBatch::new(vec![rec(2, "t2", "opt2"), rec(3, "t3", "opt3")]).unwrap();
        assert_eq!(
            canonical_encode_update(&batch),
            br#"[{"opid":2,"timestamp":"t2","description":"opt2"},{"opid":3,"timestamp":"t3","description":"opt3"}]"#
        );
    }

    #[test]
    fn encodes_deletion_as_null() {
        let batch = UpdateBatch::single(UpdateRecord::deletion(1, "t9").unwrap());
        assert_eq!(
            canonical_encode_update(&batch),
            br#"[{"opid":1,"timestamp":"t9","description":null}]"#
        );
    }

    #[test]
    fn escapes_text_without_breaking_lines() {
        let r = rec(7, "t\u{e9}", "line\nbreak \"quoted\"");
        let bytes = r.encode_canonical();
        assert!(!bytes.contains(&b'\n'));
        assert_eq!(UpdateRecord::parse_canonical(&bytes).unwrap(), r);
    }

    #[test]
    fn rejects_invalid_records() {
        assert!(matches!(UpdateRecord::new(0, "t1", None), Err(Error::MalformedBatch(_))));
        assert!(matches!(UpdateRecord::new(1, "", None), Err(Error::MalformedBatch(_))));
        assert!(matches!(UpdateRecord::new(1, "t\n1", None), Err(Error::MalformedBatch(_))));
    }

    #[test]
    fn rejects_invalid_batches() {
        assert!(UpdateBatch::new(vec![]).is_err());
        assert!(UpdateBatch::new(vec![rec(1, "t1", "a"), rec(1, "t1", "b")]).is_err());
        // Same opid with a different timestamp is a legitimate update within one batch.
        assert!(UpdateBatch::new(vec![rec(1, "t1", "a"), rec(1, "t2", "b")]).is_ok());
    }

    #[test]
    fn parsing_is_strict() {
        let cases: &[&[u8]] = &[
            br#"[]"#,
            br#"[{"opid":1,"timestamp":"t1"}]"#,
            br#"[{"opid":1,"timestamp":"t1","description":"a","extra":1}]"#,
            br#"[{"opid":0,"timestamp":"t1","description":"a"}]"#,
            br#"[{"opid":-1,"timestamp":"t1","description":"a"}]"#,
            br#"[{"opid":1,"timestamp":"","description":"a"}]"#,
            br#"[{"opid":1,"timestamp":"t1","description":5}]"#,
            br#"[[{"opid":1,"timestamp":"t1","description":"a"}]]"#,
            br#"{"opid":1,"timestamp":"t1","description":"a"}"#,
        ];
        for c in cases {
            assert!(UpdateBatch::from_json(c).is_err(), "{}", String::from_utf8_lossy(c));
        }
    }

    #[test]
    fn canonical_parse_rejects_whitespace_and_key_reordering() {
        let lenient = br#"[ {"timestamp":"t1", "opid":1, "description":"opt1"} ]"#;
        let batch = UpdateBatch::from_json(lenient).unwrap();
        assert_eq!(batch, UpdateBatch::single(rec(1, "t1", "opt1")));
        assert!(UpdateBatch::parse_canonical(lenient).is_err());
        assert!(UpdateBatch::parse_canonical(&batch.encode_canonical()).is_ok());
    }
}
