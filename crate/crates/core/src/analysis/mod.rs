//! Bottleneck analysis: windowed resampling of WiFi and access samples,
//! plan-change splitting, vantage point filtering and the prevalence and
//! magnitude statistics built on top.

mod change;
mod report;
mod stats;
mod summary;
mod vantage;
mod windows;

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{rfc3339, PathKind, ThroughputSample};

pub use change::{detect_access_change, DEFAULT_RATIO_THRESHOLD, DEFAULT_SUSTAIN_WINDOWS};
pub use report::{cdf_csv, cohort_report, tier_slug, ClassCounts, CohortCounts, Report, TierCdf, TierCount};
pub use stats::{
    bottleneck_prevalence, classify_prevalence, effective_throughput, percentile_nearest_rank,
    prevalence_cdf, sample_error_of_difference, CdfPoint, PrevalenceClass,
};
pub use summary::{tier_summary, TierSummary};
pub use vantage::{
    assign_speed_tier, filter_vantage_points, split_household, SpeedTier, TierAssignment,
    TierSource, VantagePoint, VantageSegment, VantageStats, DEFAULT_MIN_WINDOWS,
    TIER_INFERENCE_PERCENTILE,
};
pub use windows::{median, resample_windows, window_start, CoincidentWindow, DEFAULT_WINDOW_SECONDS};

pub const DEFAULT_RARE_MAX: f64 = 0.1;
pub const DEFAULT_FREQUENT_MIN: f64 = 0.8;

/// Every tunable of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisParams {
    pub window_seconds: u32,
    pub min_windows: usize,
    pub ratio_threshold: f64,
    pub sustain_windows: usize,
    pub rare_max: f64,
    pub frequent_min: f64,
    /// Known plan tiers keyed by vantage id (`household/segment`).
    pub tier_metadata: BTreeMap<String, SpeedTier>,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        AnalysisParams {
            window_seconds: DEFAULT_WINDOW_SECONDS,
            min_windows: DEFAULT_MIN_WINDOWS,
            ratio_threshold: DEFAULT_RATIO_THRESHOLD,
            sustain_windows: DEFAULT_SUSTAIN_WINDOWS,
            rare_max: DEFAULT_RARE_MAX,
            frequent_min: DEFAULT_FREQUENT_MIN,
            tier_metadata: BTreeMap::new(),
        }
    }
}

impl AnalysisParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_seconds == 0 {
            return Err(Error::invalid("window_seconds must be positive"));
        }
        if !(self.ratio_threshold > 1.0) {
            return Err(Error::invalid("ratio_threshold must exceed 1"));
        }
        if self.sustain_windows == 0 {
            return Err(Error::invalid("sustain_windows must be positive"));
        }
        if !(0.0..=1.0).contains(&self.rare_max)
            || !(0.0..=1.0).contains(&self.frequent_min)
            || self.rare_max >= self.frequent_min
        {
            return Err(Error::invalid(
                "class thresholds must satisfy 0 <= rare_max < frequent_min <= 1",
            ));
        }
        Ok(())
    }
}

/// Windows and detected splits of one household.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholdWindows {
    pub household_id: String,
    pub windows: Vec<CoincidentWindow>,
    pub splits: Vec<DateTime<Utc>>,
}

/// Intermediate and final products of the pipeline.
#[derive(Debug, Clone)]
pub struct CohortAnalysis {
    pub households: Vec<HouseholdWindows>,
    pub retained: Vec<VantageSegment>,
    pub stats: Vec<VantageStats>,
    pub counts: CohortCounts,
}

impl CohortAnalysis {
    pub fn report(&self, params: &AnalysisParams) -> Result<Report> {
        cohort_report(&self.stats, self.counts.clone(), params)
    }

    pub fn tier_summaries(&self) -> Vec<TierSummary> {
        tier_summary(&self.stats)
    }
}

/// Runs the full pipeline over samples from any number of households.
///
/// Produces an empty (but valid) analysis when nothing survives filtering;
/// [`CohortAnalysis::report`] is where that becomes an error.
pub fn analyze_samples(samples: &[ThroughputSample], params: &AnalysisParams) -> Result<CohortAnalysis> {
    params.validate()?;

    let mut by_household: BTreeMap<&str, Vec<ThroughputSample>> = BTreeMap::new();
    for s in samples {
        by_household.entry(s.household_id.as_str()).or_default().push(s.clone());
    }

    let mut households = Vec::with_capacity(by_household.len());
    let mut candidates = Vec::new();
    for (household_id, hh_samples) in &by_household {
        let windows = resample_windows(hh_samples, params.window_seconds);
        let splits = detect_access_change(&windows, params.ratio_threshold, params.sustain_windows)?;
        candidates.extend(split_household(household_id, &windows, &splits, params.window_seconds)?);
        households.push(HouseholdWindows {
            household_id: household_id.to_string(),
            windows,
            splits,
        });
    }

    let candidate_count = candidates.len();
    let retained = filter_vantage_points(candidates, params.min_windows);
    let stats = retained
        .iter()
        .map(|seg| {
            let meta = params.tier_metadata.get(&seg.point.vantage_id).copied();
            let tier = assign_speed_tier(meta, &seg.windows)?;
            VantageStats::compute(seg, tier, params.rare_max, params.frequent_min)
        })
        .collect::<Result<Vec<_>>>()?;

    let period_start = samples.iter().map(|s| s.timestamp_utc).min();
    let period_end = samples.iter().map(|s| s.timestamp_utc).max();
    let counts = CohortCounts {
        period_start_utc: period_start.map(|t| rfc3339::format(&t)),
        period_end_utc: period_end.map(|t| rfc3339::format(&t)),
        households: by_household.len(),
        measurements: samples.len(),
        lan_wifi_measurements: samples.iter().filter(|s| s.path == PathKind::LanWifi).count(),
        wan_access_measurements: samples.iter().filter(|s| s.path == PathKind::WanAccess).count(),
        coincident_windows: households.iter().map(|h| h.windows.len()).sum(),
        households_split: households.iter().filter(|h| !h.splits.is_empty()).count(),
        candidate_vantage_points: candidate_count,
    };

    Ok(CohortAnalysis { households, retained, stats, counts })
}

