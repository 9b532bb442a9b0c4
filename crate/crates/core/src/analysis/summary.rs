use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::vantage::{SpeedTier, VantageStats};
use super::windows::median;

/// Per-tier aggregates of vantage point throughputs.
///
/// Means and medians are both reported; the mean gap is the mean of the
/// per-vantage gaps, which equals `mean_access - mean_effective`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierSummary {
    pub tier: SpeedTier,
    pub vantage_count: usize,
    pub mean_access_mbps: f64,
    pub mean_effective_mbps: f64,
    pub mean_gap_mbps: f64,
    pub median_access_mbps: f64,
    pub median_effective_mbps: f64,
    pub mean_prevalence: f64,
}

/// One summary per nonempty tier, in ascending tier order.
pub fn tier_summary(stats: &[VantageStats]) -> Vec<TierSummary> {
    let mut groups: BTreeMap<SpeedTier, Vec<&VantageStats>> = BTreeMap::new();
    for s in stats {
        groups.entry(s.speed_tier).or_default().push(s);
    }
    groups
        .into_iter()
        .map(|(tier, members)| {
            let n = members.len() as f64;
            let mean = |f: fn(&VantageStats) -> f64| members.iter().map(|s| f(s)).sum::<f64>() / n;
            let access: Vec<f64> = members.iter().map(|s| s.median_access_mbps).collect();
            let effective: Vec<f64> = members.iter().map(|s| s.effective_throughput_mbps).collect();
            TierSummary {
                tier,
                vantage_count: members.len(),
                mean_access_mbps: mean(|s| s.median_access_mbps),
                mean_effective_mbps: mean(|s| s.effective_throughput_mbps),
                mean_gap_mbps: mean(|s| s.gap_mbps),
                median_access_mbps: median(&access).expect("nonempty group"),
                median_effective_mbps: median(&effective).expect("nonempty group"),
                mean_prevalence: mean(|s| s.prevalence),
            }
        })
        .collect()
}
