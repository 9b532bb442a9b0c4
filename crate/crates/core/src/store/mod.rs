//! Append-only sample log.
//!
//! Records live in a JSON Lines file, one record per line, each line
//! flushed and synced before the append returns. On open, a trailing line
//! without its newline (or one that does not parse) is an interrupted
//! append and is truncated away; damage anywhere else is an error.

mod api;
mod io;

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::sample::{rfc3339, PathKind, ThroughputSample};

pub use api::{api_router, ApiState};
pub use io::{ExportFormat, CSV_COLUMNS};

pub const SCHEMA_VERSION: u32 = 1;

/// A persisted sample. Field order is the on-disk and CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub record_id: u64,
    #[serde(with = "rfc3339")]
    pub timestamp_utc: DateTime<Utc>,
    pub household_id: String,
    pub device_id: String,
    pub path: PathKind,
    pub throughput_mbps: f64,
    pub duration_seconds: f64,
    pub bytes_transferred: u64,
    pub tool: String,
    pub schema_version: u32,
}

impl SampleRecord {
    pub fn new(record_id: u64, s: ThroughputSample) -> Self {
        SampleRecord {
            record_id,
            timestamp_utc: s.timestamp_utc,
            household_id: s.household_id,
            device_id: s.device_id,
            path: s.path,
            throughput_mbps: s.throughput_mbps,
            duration_seconds: s.duration_seconds,
            bytes_transferred: s.bytes_transferred,
            tool: s.tool,
            schema_version: SCHEMA_VERSION,
        }
    }

    pub fn sample(&self) -> ThroughputSample {
        ThroughputSample {
            timestamp_utc: self.timestamp_utc,
            household_id: self.household_id.clone(),
            device_id: self.device_id.clone(),
            path: self.path,
            throughput_mbps: self.throughput_mbps,
            duration_seconds: self.duration_seconds,
            bytes_transferred: self.bytes_transferred,
            tool: self.tool.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryFilter {
    pub household_id: Option<String>,
    pub path: Option<PathKind>,
    pub from_utc: Option<DateTime<Utc>>,
    pub to_utc: Option<DateTime<Utc>>,
}

impl QueryFilter {
    pub fn validate(&self) -> Result<()> {
        if let (Some(from), Some(to)) = (self.from_utc, self.to_utc) {
            if from >= to {
                return Err(Error::invalid(format!(
                    "time range is empty: from {} is not before to {}",
                    rfc3339::format(&from),
                    rfc3339::format(&to)
                )));
            }
        }
        Ok(())
    }

    pub fn matches(&self, r: &SampleRecord) -> bool {
        self.household_id.as_ref().map_or(true, |h| *h == r.household_id)
            && self.path.map_or(true, |p| p == r.path)
            && self.from_utc.map_or(true, |f| r.timestamp_utc >= f)
            && self.to_utc.map_or(true, |t| r.timestamp_utc < t)
    }
}

struct Writer {
    file: File,
    len: u64,
    next_id: u64,
}

/// Single writer, many readers. Readers always see a prefix of the log.
pub struct Store {
    path: PathBuf,
    writer: Mutex<Writer>,
    records: RwLock<Vec<SampleRecord>>,
}

impl Store {
    /// Opens (creating if needed) the log at `path`, recovering from an
    /// interrupted final append.
    pub fn open(path: impl AsRef<Path>) -> Result<Store> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;

        let mut records: Vec<SampleRecord> = Vec::new();
        let mut good_len = 0u64;
        let mut reader = BufReader::new(&file);
        let mut line = String::new();
        let mut line_no = 0usize;
        let mut torn = false;
        loop {
            line.clear();
            let n = reader.read_line(&mut line)?;
            if n == 0 {
                break;
            }
            line_no += 1;
            let complete = line.ends_with('\n');
            let parsed = serde_json::from_str::<SampleRecord>(line.trim_end());
            match (complete, parsed) {
                (true, Ok(rec)) => {
                    if let Some(prev) = records.last() {
                        if rec.record_id <= prev.record_id {
                            return Err(corrupt(&path, line_no, "record ids not increasing"));
                        }
                    }
                    records.push(rec);
                    good_len += n as u64;
                }
                (true, Err(e)) => {
                    // only the final line may be damaged
                    let mut rest = String::new();
                    if reader.read_line(&mut rest)? != 0 {
                        return Err(corrupt(&path, line_no, &e.to_string()));
                    }
                    torn = true;
                    break;
                }
                (false, _) => {
                    torn = true;
                    break;
                }
            }
        }
        drop(reader);

        if torn {
            warn!(path = %path.display(), line = line_no, "dropping interrupted record");
            file.set_len(good_len)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        let next_id = records.last().map_or(1, |r| r.record_id + 1);
        Ok(Store {
            path,
            writer: Mutex::new(Writer { file, len: good_len, next_id }),
            records: RwLock::new(records),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.records.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Validates and durably appends one sample, returning its id.
    pub fn append_sample(&self, sample: ThroughputSample) -> Result<u64> {
        sample.validate()?;
        let mut ids = self.append_validated(vec![sample])?;
        Ok(ids.remove(0))
    }

    /// Appends all samples in one write, or none of them.
    pub fn append_batch(&self, samples: Vec<ThroughputSample>) -> Result<Vec<u64>> {
        for (i, s) in samples.iter().enumerate() {
            s.validate().map_err(|e| Error::Import { row: i + 1, message: e.to_string() })?;
        }
        self.append_validated(samples)
    }

    fn append_validated(&self, samples: Vec<ThroughputSample>) -> Result<Vec<u64>> {
        let mut w = self.writer.lock().unwrap();
        let first_id = w.next_id;
        let batch: Vec<SampleRecord> = samples
            .into_iter()
            .enumerate()
            .map(|(i, s)| SampleRecord::new(first_id + i as u64, s))
            .collect();
        self.write_locked(&mut w, batch)
    }

    /// Writes records whose ids are already assigned and increasing.
    fn write_locked(&self, w: &mut Writer, batch: Vec<SampleRecord>) -> Result<Vec<u64>> {
        let mut buf = Vec::new();
        for r in &batch {
            serde_json::to_writer(&mut buf, r).expect("record serializes");
            buf.push(b'\n');
        }

        let written = w.file.write_all(&buf).and_then(|_| w.file.sync_data());
        if let Err(e) = written {
            // leave no partial record behind
            let len = w.len;
            let _ = w.file.set_len(len);
            let _ = w.file.sync_all();
            return Err(Error::Storage(e));
        }
        w.len += buf.len() as u64;
        if let Some(last) = batch.last() {
            w.next_id = last.record_id + 1;
        }

        let ids = batch.iter().map(|r| r.record_id).collect();
        self.records.write().unwrap().extend(batch);
        Ok(ids)
    }

    /// Matching records ordered by timestamp, then record id.
    pub fn query_samples(&self, filter: &QueryFilter) -> Result<Vec<SampleRecord>> {
        filter.validate()?;
        let mut out: Vec<SampleRecord> = self
            .records
            .read()
            .unwrap()
            .iter()
            .filter(|r| filter.matches(r))
            .cloned()
            .collect();
        out.sort_by(|a, b| a.timestamp_utc.cmp(&b.timestamp_utc).then(a.record_id.cmp(&b.record_id)));
        Ok(out)
    }

    pub fn all_samples(&self) -> Vec<ThroughputSample> {
        self.records.read().unwrap().iter().map(SampleRecord::sample).collect()
    }
}

fn corrupt(path: &Path, line: usize, why: &str) -> Error {
    Error::Storage(std::io::Error::new(
        std::io::ErrorKind::InvalidData,
        format!("{}: line {line}: {why}", path.display()),
    ))
}

/// Anything that can durably accept samples.
pub trait SampleSink: Send + Sync {
    fn append(&self, sample: ThroughputSample) -> Result<u64>;
}

impl SampleSink for Store {
    fn append(&self, sample: ThroughputSample) -> Result<u64> {
        self.append_sample(sample)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    pub(crate) fn sample(secs: i64, household: &str, path: PathKind, mbps: f64) -> ThroughputSample {
        let bytes = (mbps * 1e6 * 10.0 / 8.0).round() as u64;
        ThroughputSample::from_transfer(
            Utc.timestamp_opt(1_650_000_000 + secs, 0).unwrap(),
            household,
            "dev",
            path,
            bytes,
            10.0,
            "ndt7-download",
        )
        .unwrap()
    }

    #[test]
    fn ids_start_at_one_and_increase() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path().join("s.jsonl")).unwrap();
        assert_eq!(store.append_sample(sample(0, "h", PathKind::WanAccess, 100.0)).unwrap(), 1);
        assert_eq!(store.append_sample(sample(5, "h", PathKind::WanAccess, 90.0)).unwrap(), 2);
    }

    #[test]
    fn invalid_sample_rejected_and_not_written() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path().join("s.jsonl")).unwrap();
        let mut bad = sample(0, "h", PathKind::WanAccess, 100.0);
        bad.throughput_mbps *= 1.01;
        assert!(matches!(store.append_sample(bad), Err(Error::Validation(_))));
        assert!(store.is_empty());
        assert_eq!(std::fs::metadata(store.path()).unwrap().len(), 0);
    }

    #[test]
    fn filters() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path().join("s.jsonl")).unwrap();
        for i in 0..3 {
            store.append_sample(sample(i * 100, "h", PathKind::LanWifi, 50.0)).unwrap();
        }
        for i in 0..2 {
            store.append_sample(sample(i * 100 + 50, "h", PathKind::WanAccess, 90.0)).unwrap();
        }
        let wifi = store
            .query_samples(&QueryFilter { path: Some(PathKind::LanWifi), ..Default::default() })
            .unwrap();
        assert_eq!(wifi.len(), 3);
        assert!(wifi.iter().all(|r| r.path == PathKind::LanWifi));
        assert_eq!(store.query_samples(&QueryFilter::default()).unwrap().len(), 5);

        let t = |s: i64| Utc.timestamp_opt(1_650_000_000 + s, 0).unwrap();
        let disjoint = QueryFilter { from_utc: Some(t(10_000)), to_utc: Some(t(20_000)), ..Default::default() };
        assert!(store.query_samples(&disjoint).unwrap().is_empty());
        let inverted = QueryFilter { from_utc: Some(t(5)), to_utc: Some(t(5)), ..Default::default() };
        assert!(matches!(store.query_samples(&inverted), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn query_orders_by_timestamp_then_id() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path().join("s.jsonl")).unwrap();
        store.append_sample(sample(500, "h", PathKind::LanWifi, 50.0)).unwrap();
        store.append_sample(sample(100, "h", PathKind::LanWifi, 50.0)).unwrap();
        store.append_sample(sample(100, "h", PathKind::WanAccess, 50.0)).unwrap();
        let ids: Vec<u64> = store.query_samples(&QueryFilter::default()).unwrap().iter().map(|r| r.record_id).collect();
        assert_eq!(ids, vec![2, 3, 1]);
    }

    #[test]
    fn reopen_keeps_records_and_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        {
            let store = Store::open(&path).unwrap();
            store.append_sample(sample(0, "h", PathKind::WanAccess, 100.0)).unwrap();
            store.append_sample(sample(1, "h", PathKind::LanWifi, 80.0)).unwrap();
        }
        let store = Store::open(&path).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.append_sample(sample(2, "h", PathKind::LanWifi, 80.0)).unwrap(), 3);
        let store = Store::open(&path).unwrap();
        assert_eq!(store.len(), 3);
    }

    #[test]
    fn torn_tail_is_dropped_on_recovery() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        {
            let store = Store::open(&path).unwrap();
            store.append_sample(sample(0, "h", PathKind::WanAccess, 100.0)).unwrap();
            store.append_sample(sample(1, "h", PathKind::WanAccess, 100.0)).unwrap();
        }
        let intact = std::fs::read(&path).unwrap();
        let mut torn = intact.clone();
        torn.extend_from_slice(br#"{"record_id":3,"timestamp_utc":"2022-"#);
        std::fs::write(&path, &torn).unwrap();

        let store = Store::open(&path).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(std::fs::read(&path).unwrap(), intact);
        assert_eq!(store.append_sample(sample(2, "h", PathKind::WanAccess, 100.0)).unwrap(), 3);
    }

    #[test]
    fn corruption_before_the_tail_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        {
            let store = Store::open(&path).unwrap();
            store.append_sample(sample(0, "h", PathKind::WanAccess, 100.0)).unwrap();
        }
        let mut bytes = b"garbage\n".to_vec();
        bytes.extend(std::fs::read(&path).unwrap());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(Store::open(&path), Err(Error::Storage(_))));
    }
}
