//! Cohort-level report: counts per tier, prevalence distributions and
//! throughput gaps across all retained vantage points.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::stats::{prevalence_cdf, CdfPoint, PrevalenceClass};
use super::summary::{tier_summary, TierSummary};
use super::vantage::{SpeedTier, VantageStats};
use super::windows::median;
use super::AnalysisParams;
use crate::error::{Error, Result};

/// Dataset-level counts that do not derive from the retained vantage points.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortCounts {
    pub period_start_utc: Option<String>,
    pub period_end_utc: Option<String>,
    pub households: usize,
    pub measurements: usize,
    pub lan_wifi_measurements: usize,
    pub wan_access_measurements: usize,
    pub coincident_windows: usize,
    pub households_split: usize,
    pub candidate_vantage_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierCount {
    pub tier: SpeedTier,
    pub vantage_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierCdf {
    pub tier: SpeedTier,
    pub points: Vec<CdfPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub rare: usize,
    pub mixed: usize,
    pub frequent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub counts: CohortCounts,
    pub retained_households: usize,
    pub vantage_points: usize,
    pub dropped_vantage_points: usize,
    pub tier_counts: Vec<TierCount>,
    pub retained_windows: usize,
    pub mean_windows_per_vantage_point: f64,
    pub vantage_points_with_bottleneck: usize,
    pub at_least_one_bottleneck_fraction: f64,
    pub class_counts: ClassCounts,
    pub median_access_frequent_mbps: Option<f64>,
    pub median_access_rare_mbps: Option<f64>,
    pub tiers: Vec<TierSummary>,
    pub prevalence_cdf: Vec<CdfPoint>,
    pub prevalence_cdf_by_tier: Vec<TierCdf>,
    pub sample_error_cdf: Vec<CdfPoint>,
    pub params: AnalysisParams,
}

/// Aggregates retained vantage point statistics into a report.
pub fn cohort_report(
    stats: &[VantageStats],
    counts: CohortCounts,
    params: &AnalysisParams,
) -> Result<Report> {
    if stats.is_empty() {
        return Err(Error::insufficient(format!(
            "no vantage point has at least {} coincident windows",
            params.min_windows
        )));
    }
    let n = stats.len();
    let mut households: Vec<&str> = stats.iter().map(|s| s.household_id.as_str()).collect();
    households.sort_unstable();
    households.dedup();

    let tier_counts = SpeedTier::ALL
        .iter()
        .map(|&tier| TierCount {
            tier,
            vantage_points: stats.iter().filter(|s| s.speed_tier == tier).count(),
        })
        .collect();

    let class_count = |c: PrevalenceClass| stats.iter().filter(|s| s.class == c).count();
    let class_median_access = |c: PrevalenceClass| {
        let v: Vec<f64> = stats.iter().filter(|s| s.class == c).map(|s| s.median_access_mbps).collect();
        median(&v)
    };

    let with_bottleneck = stats.iter().filter(|s| s.bottleneck_window_count > 0).count();
    let retained_windows: usize = stats.iter().map(|s| s.window_count).sum();
    let prevalences: Vec<f64> = stats.iter().map(|s| s.prevalence).collect();
    let errors: Vec<f64> = stats.iter().map(|s| s.diff_sample_error_mbps).collect();

    let mut by_tier = Vec::new();
    for tier in SpeedTier::ALL {
        let v: Vec<f64> = stats.iter().filter(|s| s.speed_tier == tier).map(|s| s.prevalence).collect();
        if !v.is_empty() {
            by_tier.push(TierCdf { tier, points: prevalence_cdf(&v)? });
        }
    }

    let dropped = counts.candidate_vantage_points.saturating_sub(n);
    Ok(Report {
        counts,
        retained_households: households.len(),
        vantage_points: n,
        dropped_vantage_points: dropped,
        tier_counts,
        retained_windows,
        mean_windows_per_vantage_point: retained_windows as f64 / n as f64,
        vantage_points_with_bottleneck: with_bottleneck,
        at_least_one_bottleneck_fraction: with_bottleneck as f64 / n as f64,
        class_counts: ClassCounts {
            rare: class_count(PrevalenceClass::Rare),
            mixed: class_count(PrevalenceClass::Mixed),
            frequent: class_count(PrevalenceClass::Frequent),
        },
        median_access_frequent_mbps: class_median_access(PrevalenceClass::Frequent),
        median_access_rare_mbps: class_median_access(PrevalenceClass::Rare),
        tiers: tier_summary(stats),
        prevalence_cdf: prevalence_cdf(&prevalences)?,
        prevalence_cdf_by_tier: by_tier,
        sample_error_cdf: prevalence_cdf(&errors)?,
        params: params.clone(),
    })
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }

    /// Plain-text summary laid out like the deployment summary table.
    pub fn to_text(&self) -> String {
        let mut t = String::new();
        let c = &self.counts;
        let rule = "-".repeat(44);
        let period = match (&c.period_start_utc, &c.period_end_utc) {
            (Some(a), Some(b)) => format!("{a} - {b}"),
            _ => "n/a".to_string(),
        };
        let _ = writeln!(t, "{rule}");
        let _ = writeln!(t, "{:<22}{:>22}", "Period", period);
        let _ = writeln!(t, "{:<22}{:>22}", "Households", c.households);
        let _ = writeln!(t, "{rule}");
        let _ = writeln!(t, "{:<22}{:>22}", "Vantage Points", self.vantage_points);
        for tc in &self.tier_counts {
            let label = match tc.tier {
                SpeedTier::Above800 => "> 800 Mbps".to_string(),
                SpeedTier::Below50 => "< 50".to_string(),
                other => other.label().to_string(),
            };
            let _ = writeln!(t, "{:<22}{:>22}", format!("  - {label}"), tc.vantage_points);
        }
        let _ = writeln!(t, "{rule}");
        let _ = writeln!(t, "{:<22}{:>22}", "Measurements", c.measurements);
        let _ = writeln!(t, "{rule}");
        let _ = writeln!(t);
        let _ = writeln!(t, "retained households            {}", self.retained_households);
        let _ = writeln!(t, "households split               {}", c.households_split);
        let _ = writeln!(
            t,
            "dropped vantage points         {} (< {} coincident windows)",
            self.dropped_vantage_points, self.params.min_windows
        );
        let _ = writeln!(t, "coincident windows (retained)  {}", self.retained_windows);
        let _ = writeln!(t, "mean windows per vantage point {:.2}", self.mean_windows_per_vantage_point);
        let _ = writeln!(
            t,
            "at least one WiFi bottleneck   {}/{} ({:.2}%)",
            self.vantage_points_with_bottleneck,
            self.vantage_points,
            self.at_least_one_bottleneck_fraction * 100.0
        );
        let _ = writeln!(
            t,
            "prevalence classes             rare {} / mixed {} / frequent {}",
            self.class_counts.rare, self.class_counts.mixed, self.class_counts.frequent
        );
        let fmt_opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.2} Mbps"));
        let _ = writeln!(t, "median access, frequent        {}", fmt_opt(self.median_access_frequent_mbps));
        let _ = writeln!(t, "median access, rare            {}", fmt_opt(self.median_access_rare_mbps));
        let _ = writeln!(t);
        let _ = writeln!(
            t,
            "{:<9}{:>4}{:>13}{:>13}{:>11}{:>13}{:>13}{:>11}",
            "tier", "n", "mean access", "mean eff.", "mean gap", "med. access", "med. eff.", "mean prev."
        );
        for s in &self.tiers {
            let _ = writeln!(
                t,
                "{:<9}{:>4}{:>13.2}{:>13.2}{:>11.2}{:>13.2}{:>13.2}{:>11.3}",
                s.tier.label(),
                s.vantage_count,
                s.mean_access_mbps,
                s.mean_effective_mbps,
                s.mean_gap_mbps,
                s.median_access_mbps,
                s.median_effective_mbps,
                s.mean_prevalence
            );
        }
        t
    }
}

/// `value,cumulative_fraction` rows with a header.
pub fn cdf_csv(points: &[CdfPoint]) -> String {
    let mut out = String::from("value,cumulative_fraction\n");
    for p in points {
        let _ = writeln!(out, "{},{}", p.value, p.cumulative_fraction);
    }
    out
}

/// File-name-safe tier tag.
pub fn tier_slug(tier: SpeedTier) -> &'static str {
    match tier {
        SpeedTier::Below50 => "lt50",
        SpeedTier::From50To100 => "50-100",
        SpeedTier::From100To200 => "100-200",
        SpeedTier::From200To400 => "200-400",
        SpeedTier::From400To800 => "400-800",
        SpeedTier::Above800 => "gt800",
    }
}
