//! Vantage points: household segments with a constant access plan.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::stats::{
    bottleneck_prevalence, classify_prevalence, effective_throughput, percentile_nearest_rank,
    sample_error_of_difference, PrevalenceClass,
};
use super::windows::{median, CoincidentWindow};
use crate::error::{Error, Result};
use crate::sample::rfc3339;

pub const DEFAULT_MIN_WINDOWS: usize = 20;
/// Percentile of window access medians used when no plan metadata exists.
pub const TIER_INFERENCE_PERCENTILE: f64 = 0.95;

/// Access plan bins, lower bound inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpeedTier {
    Below50,
    From50To100,
    From100To200,
    From200To400,
    From400To800,
    Above800,
}

impl SpeedTier {
    pub const ALL: [SpeedTier; 6] = [
        SpeedTier::Below50,
        SpeedTier::From50To100,
        SpeedTier::From100To200,
        SpeedTier::From200To400,
        SpeedTier::From400To800,
        SpeedTier::Above800,
    ];

    pub fn lower_bound_mbps(self) -> f64 {
        match self {
            SpeedTier::Below50 => 0.0,
            SpeedTier::From50To100 => 50.0,
            SpeedTier::From100To200 => 100.0,
            SpeedTier::From200To400 => 200.0,
            SpeedTier::From400To800 => 400.0,
            SpeedTier::Above800 => 800.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SpeedTier::Below50 => "<50",
            SpeedTier::From50To100 => "50-100",
            SpeedTier::From100To200 => "100-200",
            SpeedTier::From200To400 => "200-400",
            SpeedTier::From400To800 => "400-800",
            SpeedTier::Above800 => ">800",
        }
    }

    /// Bin for a measured speed; rejects nonpositive and non-finite input.
    pub fn from_mbps(mbps: f64) -> Result<SpeedTier> {
        if !(mbps > 0.0) || !mbps.is_finite() {
            return Err(Error::invalid(format!("no speed tier for {mbps} Mbps")));
        }
        Ok(*SpeedTier::ALL
            .iter()
            .rev()
            .find(|t| mbps >= t.lower_bound_mbps())
            .expect("Below50 has lower bound 0"))
    }
}

impl fmt::Display for SpeedTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SpeedTier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SpeedTier::ALL
            .into_iter()
            .find(|t| t.label() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown speed tier {s:?}")))
    }
}

impl Serialize for SpeedTier {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for SpeedTier {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TierSource {
    Metadata,
    Inferred,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierAssignment {
    pub tier: SpeedTier,
    pub source: TierSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VantagePoint {
    pub vantage_id: String,
    pub household_id: String,
    pub segment_index: usize,
    #[serde(with = "rfc3339")]
    pub period_start_utc: DateTime<Utc>,
    #[serde(with = "rfc3339")]
    pub period_end_utc: DateTime<Utc>,
}

impl VantagePoint {
    pub fn id_for(household_id: &str, segment_index: usize) -> String {
        format!("{household_id}/{segment_index}")
    }
}

/// A vantage point together with the windows that fall in its period.
#[derive(Debug, Clone, PartialEq)]
pub struct VantageSegment {
    pub point: VantagePoint,
    pub windows: Vec<CoincidentWindow>,
}

/// Cuts a household's time-ordered windows at `split_instants`.
///
/// The household period runs from the first window start to the end of the
/// last window. `k` splits give `k + 1` contiguous segments.
pub fn split_household(
    household_id: &str,
    windows: &[CoincidentWindow],
    split_instants: &[DateTime<Utc>],
    window_seconds: u32,
) -> Result<Vec<VantageSegment>> {
    let (Some(first), Some(last)) = (windows.first(), windows.last()) else {
        if split_instants.is_empty() {
            return Ok(Vec::new());
        }
        return Err(Error::invalid("cannot split a household without windows"));
    };
    let start = first.window_start_utc;
    let end = last.window_start_utc + Duration::seconds(i64::from(window_seconds));

    let mut bounds = Vec::with_capacity(split_instants.len() + 2);
    bounds.push(start);
    for &s in split_instants {
        if s <= start || s >= end {
            return Err(Error::invalid(format!(
                "split {} outside household period ({}, {})",
                rfc3339::format(&s),
                rfc3339::format(&start),
                rfc3339::format(&end)
            )));
        }
        if s <= *bounds.last().unwrap() {
            return Err(Error::invalid("split instants must be strictly increasing"));
        }
        bounds.push(s);
    }
    bounds.push(end);

    Ok(bounds
        .windows(2)
        .enumerate()
        .map(|(idx, pair)| {
            let (seg_start, seg_end) = (pair[0], pair[1]);
            VantageSegment {
                point: VantagePoint {
                    vantage_id: VantagePoint::id_for(household_id, idx),
                    household_id: household_id.to_string(),
                    segment_index: idx,
                    period_start_utc: seg_start,
                    period_end_utc: seg_end,
                },
                windows: windows
                    .iter()
                    .filter(|w| w.window_start_utc >= seg_start && w.window_start_utc < seg_end)
                    .cloned()
                    .collect(),
            }
        })
        .collect())
}

/// Keeps vantage points with at least `min_windows` coincident windows.
pub fn filter_vantage_points(candidates: Vec<VantageSegment>, min_windows: usize) -> Vec<VantageSegment> {
    candidates
        .into_iter()
        .filter(|c| !c.windows.is_empty() && c.windows.len() >= min_windows)
        .collect()
}

/// Uses plan metadata when known, else bins the 95th percentile of the
/// window access medians.
pub fn assign_speed_tier(
    metadata_tier: Option<SpeedTier>,
    access_windows: &[CoincidentWindow],
) -> Result<TierAssignment> {
    if let Some(tier) = metadata_tier {
        return Ok(TierAssignment { tier, source: TierSource::Metadata });
    }
    let access: Vec<f64> = access_windows.iter().map(|w| w.median_access_mbps).collect();
    let p95 = percentile_nearest_rank(&access, TIER_INFERENCE_PERCENTILE)
        .ok_or_else(|| Error::insufficient("no metadata tier and no access windows"))?;
    Ok(TierAssignment {
        tier: SpeedTier::from_mbps(p95)?,
        source: TierSource::Inferred,
    })
}

/// Per-vantage-point bottleneck statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VantageStats {
    pub vantage_id: String,
    pub household_id: String,
    pub segment_index: usize,
    #[serde(with = "rfc3339")]
    pub period_start_utc: DateTime<Utc>,
    #[serde(with = "rfc3339")]
    pub period_end_utc: DateTime<Utc>,
    pub speed_tier: SpeedTier,
    pub tier_source: TierSource,
    pub window_count: usize,
    pub bottleneck_window_count: usize,
    pub prevalence: f64,
    pub median_wifi_mbps: f64,
    pub median_access_mbps: f64,
    pub effective_throughput_mbps: f64,
    pub gap_mbps: f64,
    pub diff_sample_error_mbps: f64,
    pub class: PrevalenceClass,
}

impl VantageStats {
    pub fn compute(
        segment: &VantageSegment,
        tier: TierAssignment,
        rare_max: f64,
        frequent_min: f64,
    ) -> Result<VantageStats> {
        let windows = &segment.windows;
        let prevalence = bottleneck_prevalence(windows)?;
        let wifi: Vec<f64> = windows.iter().map(|w| w.median_wifi_mbps).collect();
        let access: Vec<f64> = windows.iter().map(|w| w.median_access_mbps).collect();
        let median_wifi_mbps = median(&wifi).expect("nonempty");
        let median_access_mbps = median(&access).expect("nonempty");
        let effective = effective_throughput(median_wifi_mbps, median_access_mbps)?;
        Ok(VantageStats {
            vantage_id: segment.point.vantage_id.clone(),
            household_id: segment.point.household_id.clone(),
            segment_index: segment.point.segment_index,
            period_start_utc: segment.point.period_start_utc,
            period_end_utc: segment.point.period_end_utc,
            speed_tier: tier.tier,
            tier_source: tier.source,
            window_count: windows.len(),
            bottleneck_window_count: windows.iter().filter(|w| w.is_bottleneck).count(),
            prevalence,
            median_wifi_mbps,
            median_access_mbps,
            effective_throughput_mbps: effective,
            gap_mbps: median_access_mbps - effective,
            diff_sample_error_mbps: sample_error_of_difference(windows)?,
            class: classify_prevalence(prevalence, rare_max, frequent_min)?,
        })
    }
}
