//! Deterministic synthetic cohorts: hourly access tests at a plan speed,
//! irregular WiFi tests below a per-household WiFi capacity, and optional
//! mid-period plan changes.
//!
//! The default layout has 52 households, 13 of which change plan, and
//! places the resulting 65 vantage points into speed tiers as
//! 3 / 15 / 3 / 10 / 21 / 13.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{rfc3339, PathKind, ThroughputSample};
use crate::store::SampleRecord;

/// Access samples fall in `nominal * [ACCESS_NOISE.0, ACCESS_NOISE.1)`.
pub const ACCESS_NOISE: (f64, f64) = (0.85, 1.05);
/// WiFi samples fall in `cap * [WIFI_SPREAD.0, WIFI_SPREAD.1)`.
pub const WIFI_SPREAD: (f64, f64) = (0.6, 1.0);
pub const TEST_SECONDS: f64 = 10.0;
pub const TOOL: &str = "synthetic";

// Nominal plan speeds, one per tier bin, clear of bin edges after noise.
const LT50: f64 = 35.0;
const T50: f64 = 75.0;
const T100: f64 = 150.0;
const T200: f64 = 300.0;
const T400: f64 = 600.0;
const T800: f64 = 950.0;

const CHANGE_PAIRS: [(f64, f64); 13] = [
    (LT50, T100),
    (LT50, T100),
    (T50, T200),
    (T50, T200),
    (T50, T200),
    (T50, T200),
    (T50, T400),
    (T50, T400),
    (T50, T400),
    (T200, T800),
    (T200, T800),
    (T100, T400),
    (T50, T800),
];

const STABLE_LAYOUT: [(f64, usize); 5] = [(LT50, 1), (T50, 7), (T200, 4), (T400, 17), (T800, 10)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdSpec {
    pub household_id: String,
    pub access_mbps: f64,
    /// Plan speed after the mid-period change, if any.
    #[serde(default)]
    pub changed_access_mbps: Option<f64>,
    #[serde(default)]
    pub wifi_cap_mbps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub households: usize,
    pub plan_changes: usize,
    pub days: u32,
    #[serde(with = "rfc3339")]
    pub start_utc: DateTime<Utc>,
    /// Same WiFi capacity for every household when set.
    pub wifi_cap_mbps: Option<f64>,
    pub wifi_cap_range_mbps: (f64, f64),
    /// Probability that a 6-hour window sees any WiFi test.
    pub wifi_window_coverage: f64,
    /// Nominal plan speeds to cycle through instead of the default layout.
    pub access_tiers_mbps: Option<Vec<f64>>,
    /// Explicit households; overrides the generated layout.
    pub explicit: Vec<HouseholdSpec>,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            households: 52,
            plan_changes: 13,
            days: 30,
            start_utc: Utc.with_ymd_and_hms(2021, 9, 18, 0, 0, 0).unwrap(),
            wifi_cap_mbps: None,
            wifi_cap_range_mbps: (150.0, 650.0),
            wifi_window_coverage: 0.85,
            access_tiers_mbps: None,
            explicit: Vec::new(),
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.explicit.is_empty() {
            if self.households == 0 {
                return Err(Error::invalid("households must be positive"));
            }
            if self.plan_changes > self.households {
                return Err(Error::invalid("plan_changes exceeds households"));
            }
        }
        if self.days == 0 {
            return Err(Error::invalid("days must be positive"));
        }
        if !(self.wifi_window_coverage > 0.0 && self.wifi_window_coverage <= 1.0) {
            return Err(Error::invalid("wifi_window_coverage must be in (0, 1]"));
        }
        if self.wifi_cap_mbps.is_some_and(|c| !positive(c)) {
            return Err(Error::invalid("wifi_cap_mbps must be positive"));
        }
        let (lo, hi) = self.wifi_cap_range_mbps;
        if !(positive(lo) && hi >= lo && hi.is_finite()) {
            return Err(Error::invalid("wifi_cap_range_mbps must be a positive range"));
        }
        if let Some(tiers) = &self.access_tiers_mbps {
            if tiers.is_empty() || !tiers.iter().all(|t| positive(*t)) {
                return Err(Error::invalid("access_tiers_mbps must be nonempty and positive"));
            }
            if self.plan_changes > 0 {
                for i in 0..self.plan_changes.min(tiers.len()) {
                    let (a, b) = (tiers[i % tiers.len()], tiers[(i + 1) % tiers.len()]);
                    if (b / a).max(a / b) < 2.0 {
                        return Err(Error::invalid(format!(
                            "plan change {a} -> {b} Mbps is under 2x and would not be distinguishable"
                        )));
                    }
                }
            }
        }
        for h in &self.explicit {
            if h.household_id.is_empty() || !positive(h.access_mbps) {
                return Err(Error::invalid(format!("bad household spec {h:?}")));
            }
            if h.changed_access_mbps.is_some_and(|c| !positive(c))
                || h.wifi_cap_mbps.is_some_and(|c| !positive(c))
            {
                return Err(Error::invalid(format!("bad household spec {h:?}")));
            }
        }
        Ok(())
    }

    /// The household layout the generator will use.
    pub fn layout(&self, rng: &mut ChaCha8Rng) -> Vec<HouseholdSpec> {
        if !self.explicit.is_empty() {
            return self.explicit.clone();
        }
        let stable_count = self.households - self.plan_changes;
        let mut plans: Vec<(f64, Option<f64>)> = match &self.access_tiers_mbps {
            Some(tiers) => {
                let n = tiers.len();
                (0..self.plan_changes)
                    .map(|i| (tiers[i % n], Some(tiers[(i + 1) % n])))
                    .chain((0..stable_count).map(|i| (tiers[i % n], None)))
                    .collect()
            }
            None => {
                let stable: Vec<f64> = STABLE_LAYOUT
                    .iter()
                    .flat_map(|&(mbps, count)| std::iter::repeat_n(mbps, count))
                    .collect();
                (0..self.plan_changes)
                    .map(|i| {
                        let (a, b) = CHANGE_PAIRS[i % CHANGE_PAIRS.len()];
                        (a, Some(b))
                    })
                    .chain((0..stable_count).map(|i| (stable[i % stable.len()], None)))
                    .collect()
            }
        };
        plans.shuffle(rng);
        plans
            .into_iter()
            .enumerate()
            .map(|(i, (access, changed))| HouseholdSpec {
                household_id: format!("hh-{:03}", i + 1),
                access_mbps: access,
                changed_access_mbps: changed,
                wifi_cap_mbps: self.wifi_cap_mbps,
            })
            .collect()
    }
}

fn make_sample(
    ts: DateTime<Utc>,
    household: &str,
    device: &str,
    path: PathKind,
    mbps: f64,
) -> ThroughputSample {
    let bytes = ((mbps * 1e6 * TEST_SECONDS / 8.0).round() as u64).max(1);
    ThroughputSample::from_transfer(ts, household, device, path, bytes, TEST_SECONDS, TOOL)
        .expect("generated samples are valid")
}

/// All samples of the cohort, ordered by timestamp then household.
pub fn generate(spec: &CohortSpec, seed: u64) -> Result<Vec<ThroughputSample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = spec.layout(&mut rng);

    let hours = i64::from(spec.days) * 24;
    let windows = i64::from(spec.days) * 4;
    let change_at = spec.start_utc + Duration::seconds(windows / 2 * 21_600);
    let mut out = Vec::new();

    for h in &layout {
        let cap = h.wifi_cap_mbps.unwrap_or_else(|| {
            let (lo, hi) = spec.wifi_cap_range_mbps;
            if hi > lo { rng.random_range(lo..hi) } else { lo }
        });
        let device_count = rng.random_range(1..=2);
        let devices: Vec<String> = (0..device_count)
            .map(|_| format!("browser-{:08x}", rng.random::<u32>()))
            .collect();

        for hour in 0..hours {
            let ts = spec.start_utc + Duration::seconds(hour * 3600 + rng.random_range(0..600));
            let nominal = match h.changed_access_mbps {
                Some(after) if ts >= change_at => after,
                _ => h.access_mbps,
            };
            let mbps = nominal * rng.random_range(ACCESS_NOISE.0..ACCESS_NOISE.1);
            out.push(make_sample(ts, &h.household_id, "agent", PathKind::WanAccess, mbps));
        }

        for w in 0..windows {
            if rng.random::<f64>() >= spec.wifi_window_coverage {
                continue;
            }
            for _ in 0..rng.random_range(1..=3) {
                let ts = spec.start_utc + Duration::seconds(w * 21_600 + rng.random_range(0..21_590));
                let mbps = cap * rng.random_range(WIFI_SPREAD.0..WIFI_SPREAD.1);
                let device = &devices[rng.random_range(0..devices.len())];
                out.push(make_sample(ts, &h.household_id, device, PathKind::LanWifi, mbps));
            }
        }
    }
    out.sort_by(|a, b| {
        a.timestamp_utc
            .cmp(&b.timestamp_utc)
            .then_with(|| a.household_id.cmp(&b.household_id))
    });
    Ok(out)
}

/// Store-format JSON Lines for `samples`, ids starting at 1.
pub fn to_jsonl(samples: &[ThroughputSample]) -> String {
    let mut out = String::new();
    for (i, s) in samples.iter().enumerate() {
        out.push_str(&serde_json::to_string(&SampleRecord::new(i as u64 + 1, s.clone())).expect("serializes"));
        out.push('\n');
    }
    out
}
