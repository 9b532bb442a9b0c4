use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ScheduleConfig;
use crate::error::{Error, Result};
use crate::sample::rfc3339;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    WanTest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    #[serde(with = "rfc3339")]
    pub fire_at_utc: DateTime<Utc>,
    /// Seconds after the schedule start.
    pub offset_seconds: u64,
    pub kind: EventKind,
}

/// WAN test times over `horizon_seconds` from `start`.
///
/// Each gap is `interval ± jitter` drawn uniformly, further narrowed so that
/// the k-th event stays within `jitter` of `k * interval`. Drift therefore
/// never accumulates and the event count is `horizon / interval` give or
/// take one.
pub fn build_schedule(
    config: &ScheduleConfig,
    start: DateTime<Utc>,
    horizon_seconds: u64,
    seed: u64,
) -> Result<Vec<ScheduledEvent>> {
    config.validate()?;
    let interval = i64::try_from(config.wan_interval_seconds).map_err(|_| Error::invalid("interval too large"))?;
    let jitter = i64::try_from(config.wan_jitter_seconds).map_err(|_| Error::invalid("jitter too large"))?;
    let horizon = i64::try_from(horizon_seconds).map_err(|_| Error::invalid("horizon too large"))?;
    if horizon < interval {
        return Err(Error::invalid(format!(
            "horizon {horizon}s shorter than interval {interval}s"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let mut prev = 0i64;
    for k in 1i64.. {
        let lo = (interval - jitter).max(k * interval - jitter - prev);
        let hi = (interval + jitter).min(k * interval + jitter - prev);
        let gap = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        let at = prev + gap;
        if at > horizon {
            break;
        }
        events.push(ScheduledEvent {
            fire_at_utc: start + Duration::seconds(at),
            offset_seconds: at as u64,
            kind: EventKind::WanTest,
        });
        prev = at;
    }
    Ok(events)
}
