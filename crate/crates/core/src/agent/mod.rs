//! The vantage-point daemon: hourly WAN tests to a remote server, a LAN
//! test server for wireless clients, one uplink at a time, and every result
//! persisted.

mod runner;
mod schedule;
mod slot;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::TestConfig;

pub use runner::{Agent, AgentHandle, NdtProber, PendingWrites, Prober, SchedulerStats, SlotOutcome, WanScheduler};
pub use schedule::{build_schedule, EventKind, ScheduledEvent};
pub use slot::{SlotKind, SlotPermit, TestSlot, DEFAULT_MAX_WAIT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub wan_interval_seconds: u64,
    pub wan_jitter_seconds: u64,
    /// Advisory cadence for browser-initiated LAN tests.
    pub lan_background_interval_seconds: u64,
    pub min_gap_seconds: u64,
    pub wan_endpoint: String,
    pub household_id: String,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            wan_interval_seconds: 3600,
            wan_jitter_seconds: 300,
            lan_background_interval_seconds: 10_800,
            min_gap_seconds: 60,
            wan_endpoint: String::new(),
            household_id: String::new(),
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.wan_interval_seconds == 0 || self.min_gap_seconds == 0 || self.lan_background_interval_seconds == 0 {
            return Err(Error::invalid("intervals and min_gap_seconds must be positive"));
        }
        if self.min_gap_seconds >= self.wan_interval_seconds {
            return Err(Error::invalid("min_gap_seconds must be below wan_interval_seconds"));
        }
        if self.wan_jitter_seconds >= self.wan_interval_seconds {
            return Err(Error::invalid("wan_jitter_seconds must be below wan_interval_seconds"));
        }
        Ok(())
    }
}

/// Full daemon configuration, read from a TOML file.
///
/// ```toml
/// household_id = "hh-017"
/// wan_endpoint = "ws://measure.example.net:4443"
/// wan_interval_seconds = 3600
/// wan_jitter_seconds = 300
/// min_gap_seconds = 60
/// lan_bind = "0.0.0.0:8080"
/// store_path = "/var/lib/wifigap/samples.jsonl"
///
/// [test]
/// duration_seconds = 10
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    #[serde(flatten)]
    pub schedule: ScheduleConfig,
    pub lan_bind: String,
    pub store_path: PathBuf,
    pub device_id: String,
    pub api_token: Option<String>,
    pub static_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub test: TestConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            schedule: ScheduleConfig::default(),
            lan_bind: "0.0.0.0:8080".into(),
            store_path: PathBuf::from("samples.jsonl"),
            device_id: "agent".into(),
            api_token: None,
            static_dir: None,
            seed: None,
            test: TestConfig::default(),
        }
    }
}

/// Environment variables that override file settings.
pub const ENV_OVERRIDES: [&str; 8] = [
    "WIFIGAP_WAN_ENDPOINT",
    "WIFIGAP_HOUSEHOLD_ID",
    "WIFIGAP_WAN_INTERVAL_SECONDS",
    "WIFIGAP_WAN_JITTER_SECONDS",
    "WIFIGAP_LAN_INTERVAL_SECONDS",
    "WIFIGAP_MIN_GAP_SECONDS",
    "WIFIGAP_LAN_BIND",
    "WIFIGAP_STORE_PATH",
];

impl AgentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Applies `WIFIGAP_*` overrides looked up through `var`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<()> {
        let num = |key: &str, raw: String| {
            raw.trim()
                .parse::<u64>()
                .map_err(|e| Error::invalid(format!("{key}={raw:?}: {e}")))
        };
        for key in ENV_OVERRIDES {
            let Some(raw) = var(key) else { continue };
            match key {
                "WIFIGAP_WAN_ENDPOINT" => self.schedule.wan_endpoint = raw,
                "WIFIGAP_HOUSEHOLD_ID" => self.schedule.household_id = raw,
                "WIFIGAP_WAN_INTERVAL_SECONDS" => self.schedule.wan_interval_seconds = num(key, raw)?,
                "WIFIGAP_WAN_JITTER_SECONDS" => self.schedule.wan_jitter_seconds = num(key, raw)?,
                "WIFIGAP_LAN_INTERVAL_SECONDS" => self.schedule.lan_background_interval_seconds = num(key, raw)?,
                "WIFIGAP_MIN_GAP_SECONDS" => self.schedule.min_gap_seconds = num(key, raw)?,
                "WIFIGAP_LAN_BIND" => self.lan_bind = raw,
                "WIFIGAP_STORE_PATH" => self.store_path = PathBuf::from(raw),
                _ => unreachable!(),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.test.validate()?;
        if self.schedule.household_id.trim().is_empty() {
            return Err(Error::invalid("household_id is required"));
        }
        if self.schedule.wan_endpoint.trim().is_empty() {
            return Err(Error::invalid("wan_endpoint is required"));
        }
        Ok(())
    }
}
