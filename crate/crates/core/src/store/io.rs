//! Bulk export and atomic import in JSON Lines and CSV.

use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::Deserialize;

use super::{QueryFilter, SampleRecord, Store, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::sample::{rfc3339, PathKind, ThroughputSample};

pub const CSV_COLUMNS: [&str; 10] = [
    "record_id",
    "timestamp_utc",
    "household_id",
    "device_id",
    "path",
    "throughput_mbps",
    "duration_seconds",
    "bytes_transferred",
    "tool",
    "schema_version",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Jsonl,
    Csv,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(ExportFormat::Jsonl),
            "csv" => Ok(ExportFormat::Csv),
            other => Err(Error::invalid(format!("unknown format {other:?}"))),
        }
    }
}

/// An incoming row; ids and schema version are optional so that bare
/// samples can be imported too.
#[derive(Debug, Deserialize)]
struct ImportRow {
    #[serde(default)]
    record_id: Option<u64>,
    #[serde(with = "rfc3339")]
    timestamp_utc: DateTime<Utc>,
    household_id: String,
    device_id: String,
    path: PathKind,
    throughput_mbps: f64,
    duration_seconds: f64,
    bytes_transferred: u64,
    tool: String,
    #[serde(default)]
    schema_version: Option<u32>,
}

impl ImportRow {
    fn into_parts(self) -> (Option<u64>, Option<u32>, ThroughputSample) {
        (
            self.record_id,
            self.schema_version,
            ThroughputSample {
                timestamp_utc: self.timestamp_utc,
                household_id: self.household_id,
                device_id: self.device_id,
                path: self.path,
                throughput_mbps: self.throughput_mbps,
                duration_seconds: self.duration_seconds,
                bytes_transferred: self.bytes_transferred,
                tool: self.tool,
            },
        )
    }
}

impl Store {
    /// Writes matching records in query order; returns the record count.
    pub fn export_records<W: Write>(
        &self,
        filter: &QueryFilter,
        format: ExportFormat,
        out: W,
    ) -> Result<usize> {
        let records = self.query_samples(filter)?;
        match format {
            ExportFormat::Jsonl => {
                let mut out = out;
                for r in &records {
                    serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
                    out.write_all(b"\n")?;
                }
                out.flush()?;
            }
            ExportFormat::Csv => {
                let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
                w.write_record(CSV_COLUMNS).map_err(csv_io)?;
                for r in &records {
                    w.serialize(r).map_err(csv_io)?;
                }
                w.flush()?;
            }
        }
        Ok(records.len())
    }

    /// Validates every row, then appends all of them in one write.
    ///
    /// Rows either all carry a `record_id` or none do. Carried ids are kept
    /// and must be unique and above every id already in the store; this
    /// makes re-importing the same export an error instead of a duplicate.
    pub fn import_records<R: Read>(&self, input: R, format: ExportFormat) -> Result<usize> {
        let rows = match format {
            ExportFormat::Jsonl => parse_jsonl(input)?,
            ExportFormat::Csv => parse_csv(input)?,
        };

        let mut carried = 0usize;
        let mut parsed = Vec::with_capacity(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            let row_no = i + 1;
            let (id, version, sample) = row.into_parts();
            if let Some(v) = version {
                if v != SCHEMA_VERSION {
                    return Err(Error::Import { row: row_no, message: format!("unsupported schema_version {v}") });
                }
            }
            sample
                .validate()
                .map_err(|e| Error::Import { row: row_no, message: e.to_string() })?;
            carried += usize::from(id.is_some());
            parsed.push((row_no, id, sample));
        }
        if parsed.is_empty() {
            return Ok(0);
        }
        if carried != 0 && carried != parsed.len() {
            return Err(Error::Import { row: 1, message: "record_id present on some rows only".into() });
        }

        if carried == 0 {
            let samples = parsed.into_iter().map(|(_, _, s)| s).collect();
            return Ok(self.append_validated(samples)?.len());
        }

        let mut w = self.writer.lock().unwrap();
        let floor = w.next_id;
        parsed.sort_by_key(|(_, id, _)| id.unwrap());
        let mut prev: Option<u64> = None;
        for (row_no, id, _) in &parsed {
            let id = id.unwrap();
            if id < floor || prev == Some(id) {
                return Err(Error::Import {
                    row: *row_no,
                    message: format!("record_id {id} already used"),
                });
            }
            prev = Some(id);
        }
        let batch = parsed
            .into_iter()
            .map(|(_, id, s)| SampleRecord::new(id.unwrap(), s))
            .collect();
        Ok(self.write_locked(&mut w, batch)?.len())
    }
}

fn parse_jsonl<R: Read>(input: R) -> Result<Vec<ImportRow>> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| Error::Import { row: i + 1, message: e.to_string() })?;
        rows.push(row);
    }
    Ok(rows)
}

fn parse_csv<R: Read>(input: R) -> Result<Vec<ImportRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<ImportRow>().enumerate() {
        rows.push(row.map_err(|e| Error::Import { row: i + 1, message: e.to_string() })?);
    }
    Ok(rows)
}

fn csv_io(e: csv::Error) -> Error {
    Error::Storage(std::io::Error::other(e))
}
