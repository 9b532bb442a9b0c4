use std::collections::BTreeMap;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::sample::{rfc3339, PathKind, ThroughputSample};

pub const DEFAULT_WINDOW_SECONDS: u32 = 21_600;

/// Medians of both paths over one epoch-aligned window of a household.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidentWindow {
    #[serde(with = "rfc3339")]
    pub window_start_utc: DateTime<Utc>,
    pub household_id: String,
    pub median_wifi_mbps: f64,
    pub median_access_mbps: f64,
    pub wifi_sample_count: usize,
    pub access_sample_count: usize,
    pub is_bottleneck: bool,
}

impl CoincidentWindow {
    pub fn new(
        window_start_utc: DateTime<Utc>,
        household_id: impl Into<String>,
        median_wifi_mbps: f64,
        median_access_mbps: f64,
        wifi_sample_count: usize,
        access_sample_count: usize,
    ) -> Self {
        CoincidentWindow {
            window_start_utc,
            household_id: household_id.into(),
            median_wifi_mbps,
            median_access_mbps,
            wifi_sample_count,
            access_sample_count,
            is_bottleneck: median_wifi_mbps < median_access_mbps,
        }
    }

    /// WiFi minus access.
    pub fn difference_mbps(&self) -> f64 {
        self.median_wifi_mbps - self.median_access_mbps
    }
}

/// Median with the mean-of-middle-two convention; `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}

/// Start of the epoch-aligned window containing `ts`.
pub fn window_start(ts: DateTime<Utc>, window_seconds: u32) -> DateTime<Utc> {
    let w = i64::from(window_seconds);
    let start = ts.timestamp().div_euclid(w) * w;
    Utc.timestamp_opt(start, 0).single().expect("aligned timestamp in range")
}

/// Groups samples into windows and keeps those holding both paths.
///
/// Output is ordered by household, then window start. Input order does not
/// matter.
pub fn resample_windows(samples: &[ThroughputSample], window_seconds: u32) -> Vec<CoincidentWindow> {
    assert!(window_seconds > 0, "window_seconds must be positive");

    #[derive(Default)]
    struct Bucket {
        wifi: Vec<f64>,
        access: Vec<f64>,
    }

    let mut buckets: BTreeMap<(&str, DateTime<Utc>), Bucket> = BTreeMap::new();
    for s in samples {
        let key = (s.household_id.as_str(), window_start(s.timestamp_utc, window_seconds));
        let bucket = buckets.entry(key).or_default();
        match s.path {
            PathKind::LanWifi => bucket.wifi.push(s.throughput_mbps),
            PathKind::WanAccess => bucket.access.push(s.throughput_mbps),
        }
    }

    buckets
        .into_iter()
        .filter_map(|((household, start), b)| {
            let wifi = median(&b.wifi)?;
            let access = median(&b.access)?;
            Some(CoincidentWindow::new(
                start,
                household,
                wifi,
                access,
                b.wifi.len(),
                b.access.len(),
            ))
        })
        .collect()
}
