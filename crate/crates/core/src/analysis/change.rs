//! Detection of access plan changes (ISP or tier switches) in a household's
//! window series.

use chrono::{DateTime, Utc};

use super::windows::{median, CoincidentWindow};
use crate::error::{Error, Result};

pub const DEFAULT_RATIO_THRESHOLD: f64 = 1.5;
pub const DEFAULT_SUSTAIN_WINDOWS: usize = 28;

/// Returns the window starts at which the access level shifts.
///
/// A candidate split at index `i` compares the median access throughput of
/// the `sustain_windows` windows before `i` with that of the
/// `sustain_windows` windows from `i` on. The ratio must exceed
/// `ratio_threshold` (or fall below its reciprocal). Each run of adjacent
/// candidates yields one split, placed where both sides deviate least from
/// their own medians. Accepted splits are at least `sustain_windows` apart.
pub fn detect_access_change(
    windows: &[CoincidentWindow],
    ratio_threshold: f64,
    sustain_windows: usize,
) -> Result<Vec<DateTime<Utc>>> {
    if !(ratio_threshold > 1.0) {
        return Err(Error::invalid(format!(
            "ratio_threshold must exceed 1, got {ratio_threshold}"
        )));
    }
    if sustain_windows == 0 {
        return Err(Error::invalid("sustain_windows must be positive"));
    }
    let span = sustain_windows;
    let access: Vec<f64> = windows.iter().map(|w| w.median_access_mbps).collect();
    let n = access.len();
    if n < 2 * span {
        return Ok(Vec::new());
    }

    let fit_cost = |i: usize| -> f64 {
        let (before, after) = (&access[i - span..i], &access[i..i + span]);
        let (mb, ma) = (median(before).unwrap(), median(after).unwrap());
        before.iter().map(|x| (x - mb).abs()).sum::<f64>()
            + after.iter().map(|x| (x - ma).abs()).sum::<f64>()
    };

    // runs of consecutive candidate indices
    let mut runs: Vec<Vec<usize>> = Vec::new();
    for i in span..=n - span {
        let before = median(&access[i - span..i]).unwrap();
        let after = median(&access[i..i + span]).unwrap();
        let ratio = after / before;
        if ratio > ratio_threshold || ratio < 1.0 / ratio_threshold {
            match runs.last_mut() {
                Some(run) if *run.last().unwrap() + 1 == i => run.push(i),
                _ => runs.push(vec![i]),
            }
        }
    }

    let mut splits: Vec<usize> = Vec::new();
    for run in runs {
        let mut best = run[0];
        let mut best_cost = fit_cost(best);
        for &i in &run[1..] {
            let c = fit_cost(i);
            if c < best_cost {
                best = i;
                best_cost = c;
            }
        }
        if splits.last().map_or(true, |&prev| best - prev >= span) {
            splits.push(best);
        }
    }
    Ok(splits.into_iter().map(|i| windows[i].window_start_utc).collect())
}
