//! Brute-force reference implementation of the per-household pipeline,
//! written without sharing code with the library. It assumes no plan
//! changes, so each retained household is exactly one vantage point.

use wifigap::{PathKind, ThroughputSample};

#[derive(Debug, Clone)]
pub struct OracleWindow {
    pub start: i64,
    pub wifi: f64,
    pub access: f64,
    pub n_wifi: usize,
    pub n_access: usize,
}

#[derive(Debug, Clone)]
pub struct OracleVantage {
    pub household: String,
    pub windows: Vec<OracleWindow>,
    pub prevalence: f64,
    pub median_wifi: f64,
    pub median_access: f64,
    pub effective: f64,
    pub tier_lower: f64,
}

#[derive(Debug, Clone)]
pub struct OracleTier {
    pub tier_lower: f64,
    pub count: usize,
    pub mean_access: f64,
    pub mean_effective: f64,
    pub mean_gap: f64,
    pub median_access: f64,
    pub median_effective: f64,
    pub mean_prevalence: f64,
}

fn median_by_selection(values: &[f64]) -> f64 {
    // pick the k-th smallest by counting, O(n^2)
    let n = values.len();
    let kth = |k: usize| -> f64 {
        for &v in values {
            let less = values.iter().filter(|&&x| x < v).count();
            let equal = values.iter().filter(|&&x| x == v).count();
            if less <= k && k < less + equal {
                return v;
            }
        }
        unreachable!()
    };
    if n % 2 == 1 {
        kth(n / 2)
    } else {
        (kth(n / 2 - 1) + kth(n / 2)) / 2.0
    }
}

fn tier_lower(mbps: f64) -> f64 {
    let bounds = [800.0, 400.0, 200.0, 100.0, 50.0];
    for b in bounds {
        if mbps >= b {
            return b;
        }
    }
    0.0
}

pub fn vantage_points(samples: &[ThroughputSample], window_seconds: i64, min_windows: usize) -> Vec<OracleVantage> {
    let mut households: Vec<String> = Vec::new();
    for s in samples {
        if !households.contains(&s.household_id) {
            households.push(s.household_id.clone());
        }
    }
    households.sort();

    let mut out = Vec::new();
    for h in households {
        let mine: Vec<&ThroughputSample> = samples.iter().filter(|s| s.household_id == h).collect();
        let bucket = |s: &ThroughputSample| {
            let t = s.timestamp_utc.timestamp();
            let mut start = t - t % window_seconds;
            if start > t {
                start -= window_seconds;
            }
            start
        };
        let mut starts: Vec<i64> = mine.iter().map(|s| bucket(s)).collect();
        starts.sort();
        starts.dedup();

        let mut windows = Vec::new();
        for start in starts {
            let pick = |p: PathKind| -> Vec<f64> {
                mine.iter()
                    .filter(|s| bucket(s) == start && s.path == p)
                    .map(|s| s.throughput_mbps)
                    .collect()
            };
            let wifi = pick(PathKind::LanWifi);
            let access = pick(PathKind::WanAccess);
            if wifi.is_empty() || access.is_empty() {
                continue;
            }
            windows.push(OracleWindow {
                start,
                wifi: median_by_selection(&wifi),
                access: median_by_selection(&access),
                n_wifi: wifi.len(),
                n_access: access.len(),
            });
        }
        if windows.len() < min_windows || windows.is_empty() {
            continue;
        }
        let n = windows.len();
        let bottlenecks = windows.iter().filter(|w| w.wifi < w.access).count();
        let wifi: Vec<f64> = windows.iter().map(|w| w.wifi).collect();
        let access: Vec<f64> = windows.iter().map(|w| w.access).collect();
        let median_wifi = median_by_selection(&wifi);
        let median_access = median_by_selection(&access);
        let effective = if median_wifi < median_access { median_wifi } else { median_access };
        let mut sorted = access.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = (95 * n + 99) / 100;
        out.push(OracleVantage {
            household: h,
            prevalence: bottlenecks as f64 / n as f64,
            median_wifi,
            median_access,
            effective,
            tier_lower: tier_lower(sorted[rank - 1]),
            windows,
        });
    }
    out
}

pub fn tiers(points: &[OracleVantage]) -> Vec<OracleTier> {
    let mut out = Vec::new();
    for lower in [0.0, 50.0, 100.0, 200.0, 400.0, 800.0] {
        let members: Vec<&OracleVantage> = points.iter().filter(|p| p.tier_lower == lower).collect();
        if members.is_empty() {
            continue;
        }
        let n = members.len() as f64;
        let mut sums = [0.0f64; 4];
        for m in &members {
            sums[0] += m.median_access;
            sums[1] += m.effective;
            sums[2] += m.median_access - m.effective;
            sums[3] += m.prevalence;
        }
        let access: Vec<f64> = members.iter().map(|m| m.median_access).collect();
        let effective: Vec<f64> = members.iter().map(|m| m.effective).collect();
        out.push(OracleTier {
            tier_lower: lower,
            count: members.len(),
            mean_access: sums[0] / n,
            mean_effective: sums[1] / n,
            mean_gap: sums[2] / n,
            median_access: median_by_selection(&access),
            median_effective: median_by_selection(&effective),
            mean_prevalence: sums[3] / n,
        });
    }
    out
}
