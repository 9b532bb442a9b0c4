//! Descriptive statistics over coincident windows and vantage points.

use serde::{Deserialize, Serialize};

use super::windows::CoincidentWindow;
use crate::error::{Error, Result};

/// Standard error of the per-window WiFi-minus-access differences.
pub fn sample_error_of_difference(windows: &[CoincidentWindow]) -> Result<f64> {
    let n = windows.len();
    if n < 2 {
        return Err(Error::insufficient(format!(
            "sample error needs at least 2 windows, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = windows.iter().map(|w| w.difference_mbps()).sum::<f64>() / nf;
    let ss = windows
        .iter()
        .map(|w| {
            let d = w.difference_mbps() - mean;
            d * d
        })
        .sum::<f64>();
    Ok((ss / (nf - 1.0)).sqrt() / nf.sqrt())
}

/// Fraction of windows in which WiFi was strictly slower than access.
pub fn bottleneck_prevalence(windows: &[CoincidentWindow]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::insufficient("prevalence of zero windows"));
    }
    let hits = windows.iter().filter(|w| w.is_bottleneck).count();
    Ok(hits as f64 / windows.len() as f64)
}

/// The throughput a user actually gets end to end.
pub fn effective_throughput(median_wifi: f64, median_access: f64) -> Result<f64> {
    if !(median_wifi > 0.0) || !(median_access > 0.0) {
        return Err(Error::invalid(format!(
            "throughputs must be positive, got wifi {median_wifi} access {median_access}"
        )));
    }
    Ok(median_wifi.min(median_access))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrevalenceClass {
    Rare,
    Mixed,
    Frequent,
}

pub fn classify_prevalence(p: f64, rare_max: f64, frequent_min: f64) -> Result<PrevalenceClass> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("prevalence {p} outside [0, 1]")));
    }
    Ok(if p <= rare_max {
        PrevalenceClass::Rare
    } else if p >= frequent_min {
        PrevalenceClass::Frequent
    } else {
        PrevalenceClass::Mixed
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub value: f64,
    pub cumulative_fraction: f64,
}

/// Empirical CDF with tied values merged into one step.
pub fn prevalence_cdf(values: &[f64]) -> Result<Vec<CdfPoint>> {
    if values.is_empty() {
        return Err(Error::insufficient("CDF of zero values"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("CDF input contains NaN"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut points: Vec<CdfPoint> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let fraction = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.value == *v => last.cumulative_fraction = fraction,
            _ => points.push(CdfPoint { value: *v, cumulative_fraction: fraction }),
        }
    }
    Ok(points)
}

/// Nearest-rank percentile (`q` in (0, 1]).
pub fn percentile_nearest_rank(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(q > 0.0 && q <= 1.0) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}
