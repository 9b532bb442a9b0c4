//! Throughput samples: the unit of measurement shared by the probe, the
//! store and the analysis pipeline.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for the throughput/bytes/duration consistency check.
pub const CONSISTENCY_TOLERANCE: f64 = 1e-9;

/// Which side of the home network a test measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    /// Wireless client to the router-adjacent server ("WiFi speed").
    LanWifi,
    /// Router vantage point to a remote server ("access speed").
    WanAccess,
}

impl PathKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PathKind::LanWifi => "lan_wifi",
            PathKind::WanAccess => "wan_access",
        }
    }
}

impl fmt::Display for PathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PathKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lan_wifi" => Ok(PathKind::LanWifi),
            "wan_access" => Ok(PathKind::WanAccess),
            other => Err(Error::invalid(format!("unknown path {other:?}"))),
        }
    }
}

/// One completed download throughput test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputSample {
    #[serde(with = "rfc3339")]
    pub timestamp_utc: DateTime<Utc>,
    pub household_id: String,
    pub device_id: String,
    pub path: PathKind,
    pub throughput_mbps: f64,
    pub duration_seconds: f64,
    pub bytes_transferred: u64,
    pub tool: String,
}

impl ThroughputSample {
    /// Builds a sample whose throughput is derived from the transfer itself.
    pub fn from_transfer(
        timestamp_utc: DateTime<Utc>,
        household_id: impl Into<String>,
        device_id: impl Into<String>,
        path: PathKind,
        bytes_transferred: u64,
        duration_seconds: f64,
        tool: impl Into<String>,
    ) -> Result<Self> {
        let throughput_mbps =
            crate::probe::compute_throughput_mbps(bytes_transferred, duration_seconds)?;
        let sample = ThroughputSample {
            timestamp_utc,
            household_id: household_id.into(),
            device_id: device_id.into(),
            path,
            throughput_mbps,
            duration_seconds,
            bytes_transferred,
            tool: tool.into(),
        };
        sample.validate()?;
        Ok(sample)
    }

    /// Checks the record-level invariants enforced on every write.
    pub fn validate(&self) -> Result<()> {
        if self.household_id.is_empty() {
            return Err(Error::Validation("household_id is empty".into()));
        }
        if !(self.duration_seconds.is_finite() && self.duration_seconds > 0.0) {
            return Err(Error::Validation(format!(
                "duration_seconds must be positive, got {}",
                self.duration_seconds
            )));
        }
        if self.bytes_transferred == 0 {
            return Err(Error::Validation("bytes_transferred must be positive".into()));
        }
        if !(self.throughput_mbps.is_finite() && self.throughput_mbps > 0.0) {
            return Err(Error::Validation(format!(
                "throughput_mbps must be positive, got {}",
                self.throughput_mbps
            )));
        }
        let expected = self.bytes_transferred as f64 * 8.0 / self.duration_seconds / 1e6;
        let rel = (self.throughput_mbps - expected).abs() / expected;
        if rel > CONSISTENCY_TOLERANCE {
            return Err(Error::Validation(format!(
                "throughput_mbps {} inconsistent with {} bytes over {}s (expected {expected})",
                self.throughput_mbps, self.bytes_transferred, self.duration_seconds
            )));
        }
        Ok(())
    }

    /// End of the interval the test occupied.
    pub fn end_utc(&self) -> DateTime<Utc> {
        self.timestamp_utc + chrono::Duration::microseconds((self.duration_seconds * 1e6) as i64)
    }
}

/// Serde adapter writing UTC instants as RFC 3339 with a `Z` suffix.
pub mod rfc3339 {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn format(ts: &DateTime<Utc>) -> String {
        ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
    }

    pub fn parse(s: &str) -> Result<DateTime<Utc>, chrono::ParseError> {
        DateTime::parse_from_rfc3339(s).map(|t| t.with_timezone(&Utc))
    }

    pub fn serialize<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        parse(&raw).map_err(de::Error::custom)
    }
}
