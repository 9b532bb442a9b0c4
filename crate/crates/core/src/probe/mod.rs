//! Streaming download throughput test: a WebSocket-framed protocol where the
//! server pushes binary payloads and interleaves JSON measurement snapshots.
//!
//! Wire format at [`DOWNLOAD_PATH`]:
//! - binary frames carry payload bytes, sized by [`next_payload_size`];
//! - text frames carry `{"elapsed_seconds": f64, "bytes_transferred": u64}`.

mod client;
mod ratelimit;
mod server;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use client::{run_download_test, DownloadClient, TestLabels, TestOutcome, TOOL_TAG};
pub use ratelimit::TokenBucket;
pub use server::{serve_download, DownloadService, ServerHandle, ServerStats};
pub use server::spawn_router;

pub const DOWNLOAD_PATH: &str = "/ndt/v7/download";

/// Tunables for a single download test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestConfig {
    pub duration_seconds: f64,
    pub snapshot_interval_seconds: f64,
    pub initial_payload_bytes: usize,
    pub max_payload_bytes: usize,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            duration_seconds: 10.0,
            snapshot_interval_seconds: 0.25,
            initial_payload_bytes: 8192,
            max_payload_bytes: 16_777_216,
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_seconds.is_finite() && self.duration_seconds > 0.0) {
            return Err(Error::invalid(format!(
                "duration_seconds must be positive, got {}",
                self.duration_seconds
            )));
        }
        if !(self.snapshot_interval_seconds.is_finite() && self.snapshot_interval_seconds > 0.0) {
            return Err(Error::invalid("snapshot_interval_seconds must be positive"));
        }
        if self.duration_seconds <= self.snapshot_interval_seconds {
            return Err(Error::invalid(
                "duration_seconds must exceed snapshot_interval_seconds",
            ));
        }
        if self.initial_payload_bytes == 0 || self.initial_payload_bytes > self.max_payload_bytes {
            return Err(Error::invalid(
                "payload sizes must satisfy 0 < initial_payload_bytes <= max_payload_bytes",
            ));
        }
        Ok(())
    }

    pub fn duration(&self) -> std::time::Duration {
        std::time::Duration::from_secs_f64(self.duration_seconds)
    }

    pub fn snapshot_interval(&self) -> std::time::Duration {
        std::time::Duration::from_secs_f64(self.snapshot_interval_seconds)
    }
}

/// Decimal megabits per second.
pub fn compute_throughput_mbps(bytes_transferred: u64, elapsed_seconds: f64) -> Result<f64> {
    if !(elapsed_seconds > 0.0) || !elapsed_seconds.is_finite() {
        return Err(Error::invalid(format!(
            "elapsed_seconds must be positive, got {elapsed_seconds}"
        )));
    }
    Ok(bytes_transferred as f64 * 8.0 / elapsed_seconds / 1e6)
}

/// Doubles the payload once it drops below 1/16 of everything sent so far,
/// never past `max_payload_bytes`.
pub fn next_payload_size(current_size: usize, total_bytes_sent: u64, config: &TestConfig) -> usize {
    let doubled = current_size.saturating_mul(2);
    if (current_size as u64) < total_bytes_sent / 16 && doubled <= config.max_payload_bytes {
        doubled
    } else {
        current_size
    }
}

/// Server-side progress report carried in text frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSnapshot {
    pub elapsed_seconds: f64,
    pub bytes_transferred: u64,
}

impl MeasurementSnapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serialization is infallible")
    }
}

pub fn parse_snapshot(message_text: &str) -> Result<MeasurementSnapshot> {
    #[derive(Deserialize)]
    struct Raw {
        elapsed_seconds: f64,
        bytes_transferred: serde_json::Number,
    }

    let raw: Raw = serde_json::from_str(message_text)
        .map_err(|e| Error::Protocol(format!("malformed snapshot {message_text:?}: {e}")))?;
    if !(raw.elapsed_seconds >= 0.0) || !raw.elapsed_seconds.is_finite() {
        return Err(Error::Protocol(format!(
            "snapshot elapsed_seconds must be nonnegative, got {}",
            raw.elapsed_seconds
        )));
    }
    let bytes_transferred = raw.bytes_transferred.as_u64().ok_or_else(|| {
        Error::Protocol(format!(
            "snapshot bytes_transferred must be a nonnegative integer, got {}",
            raw.bytes_transferred
        ))
    })?;
    Ok(MeasurementSnapshot {
        elapsed_seconds: raw.elapsed_seconds,
        bytes_transferred,
    })
}
