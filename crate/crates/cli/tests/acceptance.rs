//! Acceptance checks, one PASS/FAIL line each. Run with
//! `cargo test -p wifigap-cli --test acceptance`.

mod support;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use wifigap::analysis::{
    analyze_samples, bottleneck_prevalence, effective_throughput, filter_vantage_points, median,
    prevalence_cdf, resample_windows, AnalysisParams, CoincidentWindow, SpeedTier, VantagePoint,
    VantageSegment,
};
use wifigap::probe::{compute_throughput_mbps, next_payload_size, DownloadClient, DownloadService, TestConfig, TestLabels};
use wifigap::synth::{self, CohortSpec};
use wifigap::{PathKind, ThroughputSample};

use support::oracle;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

fn loopback_fidelity() -> Outcome {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let started = Instant::now();
    let mut detail = Vec::new();
    for rate in [5.0, 50.0, 500.0] {
        let cfg = TestConfig::default();
        let sample = rt.block_on(async {
            let server = DownloadService::new(cfg.clone())?
                .with_rate_limit(rate)?
                .serve("127.0.0.1:0")
                .await?;
            let labels = TestLabels {
                household_id: "loopback".into(),
                device_id: "acceptance".into(),
                path: PathKind::LanWifi,
            };
            let out = DownloadClient::new(cfg)?.run(&server.local_addr().to_string(), &labels).await;
            server.shutdown().await?;
            out.map(|o| o.sample)
        });
        let s = sample.map_err(|e| format!("{rate} Mbps: {e}"))?;
        let err = (s.throughput_mbps - rate).abs() / rate;
        detail.push(format!("{rate}: {:.2} Mbps in {:.2} s", s.throughput_mbps, s.duration_seconds));
        ensure(err <= 0.10, || format!("{rate} Mbps limit measured {:.3} ({:.1}% off)", s.throughput_mbps, err * 100.0))?;
        ensure((9.9..=11.5).contains(&s.duration_seconds), || {
            format!("{rate} Mbps test took {:.2} s", s.duration_seconds)
        })?;
    }
    let total = started.elapsed();
    ensure(total < Duration::from_secs(120), || format!("suite took {total:?}"))?;
    Ok(format!("{} ({:.1} s total)", detail.join(", "), total.as_secs_f64()))
}

fn oracle_samples(seed: u64) -> Vec<ThroughputSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Utc.with_ymd_and_hms(2022, 3, 1, 0, 0, 0).unwrap().timestamp();
    let nominal = [30.0, 70.0, 150.0, 300.0, 600.0, 900.0];
    let mut out = Vec::with_capacity(10_000);
    for h in 0..30usize {
        let per_household = if h < 10 { 334 } else { 333 };
        // a few short-lived households fall under the window cutoff
        let days = if h % 10 == 3 { 4 } else { 20 };
        let access = nominal[h % nominal.len()];
        let wifi_cap = rng.random_range(40.0..700.0);
        for _ in 0..per_household {
            let ts = start + rng.random_range(0..days * 86_400);
            let (path, mbps) = if rng.random_bool(0.5) {
                (PathKind::WanAccess, access * rng.random_range(0.9..1.1))
            } else {
                (PathKind::LanWifi, wifi_cap * rng.random_range(0.5..1.0))
            };
            let duration: f64 = rng.random_range(5.0..15.0);
            let bytes = (mbps * 1e6 * duration / 8.0).round() as u64;
            out.push(
                ThroughputSample::from_transfer(
                    Utc.timestamp_opt(ts, 0).unwrap(),
                    &format!("hh-{h:02}"),
                    "dev",
                    path,
                    bytes,
                    duration,
                    "oracle",
                )
                .unwrap(),
            );
        }
    }
    out
}

fn oracle_equivalence() -> Outcome {
    let samples = oracle_samples(2024);
    ensure(samples.len() == 10_000, || format!("{} samples", samples.len()))?;
    let params = AnalysisParams::default();
    let analysis = analyze_samples(&samples, &params).map_err(|e| e.to_string())?;
    let expected = oracle::vantage_points(&samples, 21_600, 20);

    ensure(analysis.households.iter().all(|h| h.splits.is_empty()), || "unexpected split".into())?;
    ensure(analysis.stats.len() == expected.len(), || {
        format!("{} vantage points, oracle {}", analysis.stats.len(), expected.len())
    })?;
    ensure(expected.len() < 30, || "no household was dropped".into())?;
    let mut compared_windows = 0;
    for (got, want) in analysis.stats.iter().zip(&expected) {
        let id = &want.household;
        ensure(got.household_id == *id, || format!("{} vs {id}", got.household_id))?;
        let segment = analysis
            .retained
            .iter()
            .find(|s| s.point.vantage_id == got.vantage_id)
            .ok_or("missing segment")?;
        ensure(segment.windows.len() == want.windows.len(), || format!("{id}: window count"))?;
        for (w, o) in segment.windows.iter().zip(&want.windows) {
            ensure(
                w.window_start_utc.timestamp() == o.start
                    && w.wifi_sample_count == o.n_wifi
                    && w.access_sample_count == o.n_access
                    && close(w.median_wifi_mbps, o.wifi)
                    && close(w.median_access_mbps, o.access)
                    && w.is_bottleneck == (o.wifi < o.access),
                || format!("{id}: window {} differs: {w:?} vs {o:?}", o.start),
            )?;
            compared_windows += 1;
        }
        ensure(
            close(got.prevalence, want.prevalence)
                && close(got.median_wifi_mbps, want.median_wifi)
                && close(got.median_access_mbps, want.median_access)
                && close(got.effective_throughput_mbps, want.effective)
                && got.speed_tier.lower_bound_mbps() == want.tier_lower,
            || format!("{id}: stats differ: {got:?} vs {want:?}"),
        )?;
    }
    let tiers = analysis.tier_summaries();
    let want_tiers = oracle::tiers(&expected);
    ensure(tiers.len() == want_tiers.len(), || "tier count differs".into())?;
    for (t, o) in tiers.iter().zip(&want_tiers) {
        ensure(
            t.tier.lower_bound_mbps() == o.tier_lower
                && t.vantage_count == o.count
                && close(t.mean_access_mbps, o.mean_access)
                && close(t.mean_effective_mbps, o.mean_effective)
                && close(t.mean_gap_mbps, o.mean_gap)
                && close(t.median_access_mbps, o.median_access)
                && close(t.median_effective_mbps, o.median_effective)
                && close(t.mean_prevalence, o.mean_prevalence),
            || format!("tier {} differs: {t:?} vs {o:?}", t.tier.label()),
        )?;
    }
    Ok(format!(
        "{} samples, {} vantage points, {compared_windows} windows, {} tiers",
        samples.len(),
        expected.len(),
        tiers.len()
    ))
}

fn windows_with(n: usize, bottlenecks: usize) -> Vec<CoincidentWindow> {
    (0..n)
        .map(|i| {
            let wifi = if i < bottlenecks { 50.0 } else { 150.0 };
            CoincidentWindow::new(Utc.timestamp_opt(i as i64 * 21_600, 0).unwrap(), "hh", wifi, 100.0, 1, 1)
        })
        .collect()
}

fn segment(id: &str, n: usize) -> VantageSegment {
    let windows = windows_with(n, 0);
    VantageSegment {
        point: VantagePoint {
            vantage_id: format!("{id}/0"),
            household_id: id.into(),
            segment_index: 0,
            period_start_utc: windows[0].window_start_utc,
            period_end_utc: windows[n - 1].window_start_utc,
        },
        windows,
    }
}

fn anchored_examples() -> Outcome {
    let p = bottleneck_prevalence(&windows_with(100, 20)).map_err(|e| e.to_string())?;
    ensure(p == 0.2, || format!("prevalence {p}"))?;
    let eff = effective_throughput(155.69, 265.60).map_err(|e| e.to_string())?;
    ensure(eff == 155.69, || format!("effective {eff}"))?;
    let gap = 265.60 - eff;
    ensure((gap - 109.91).abs() < 1e-9, || format!("gap {gap}"))?;
    let low = SpeedTier::from_mbps(58.12).map_err(|e| e.to_string())?;
    let high = SpeedTier::from_mbps(700.52).map_err(|e| e.to_string())?;
    ensure(low == SpeedTier::From50To100, || format!("58.12 -> {}", low.label()))?;
    ensure(high == SpeedTier::From400To800, || format!("700.52 -> {}", high.label()))?;
    let kept = filter_vantage_points(vec![segment("short", 19), segment("edge", 20), segment("long", 90)], 20);
    let ids: Vec<&str> = kept.iter().map(|s| s.point.household_id.as_str()).collect();
    ensure(ids == ["edge", "long"], || format!("kept {ids:?}"))?;
    Ok(format!("prevalence {p}, effective {eff}, gap {gap:.2}, 58.12 -> {}, 700.52 -> {}, 19 windows dropped", low.label(), high.label()))
}

fn split_reproduction() -> Outcome {
    let spec = CohortSpec::default();
    let samples = synth::generate(&spec, 1).map_err(|e| e.to_string())?;
    let analysis = analyze_samples(&samples, &AnalysisParams::default()).map_err(|e| e.to_string())?;
    let households = analysis.households.len();
    let split = analysis.households.iter().filter(|h| !h.splits.is_empty()).count();
    ensure(households == 52 && split == 13, || format!("{households} households, {split} split"))?;
    ensure(analysis.stats.len() == 65, || format!("{} vantage points", analysis.stats.len()))?;

    let mut before: Vec<(String, i64, u64, u64)> = analysis
        .households
        .iter()
        .flat_map(|h| h.windows.iter())
        .map(|w| (w.household_id.clone(), w.window_start_utc.timestamp(), w.median_wifi_mbps.to_bits(), w.median_access_mbps.to_bits()))
        .collect();
    let mut after: Vec<(String, i64, u64, u64)> = analysis
        .retained
        .iter()
        .flat_map(|s| s.windows.iter())
        .map(|w| (w.household_id.clone(), w.window_start_utc.timestamp(), w.median_wifi_mbps.to_bits(), w.median_access_mbps.to_bits()))
        .collect();
    before.sort();
    after.sort();
    ensure(before == after, || format!("{} windows before split, {} after", before.len(), after.len()))?;
    Ok(format!("52 households, 13 split, 65 vantage points, {} windows preserved", after.len()))
}

fn construction_forced_tiers() -> Outcome {
    let spec = CohortSpec {
        wifi_cap_mbps: Some(400.0),
        ..CohortSpec::default()
    };
    let samples = synth::generate(&spec, 7).map_err(|e| e.to_string())?;
    let analysis = analyze_samples(&samples, &AnalysisParams::default()).map_err(|e| e.to_string())?;
    let top: Vec<_> = analysis.stats.iter().filter(|s| s.speed_tier == SpeedTier::Above800).collect();
    let bottom: Vec<_> = analysis.stats.iter().filter(|s| s.speed_tier == SpeedTier::Below50).collect();
    ensure(!top.is_empty() && !bottom.is_empty(), || "a tier is empty".into())?;
    for s in &top {
        ensure(s.prevalence == 1.0, || format!("{} (>800) prevalence {}", s.vantage_id, s.prevalence))?;
    }
    for s in &bottom {
        ensure(s.prevalence == 0.0, || format!("{} (<50) prevalence {}", s.vantage_id, s.prevalence))?;
    }
    Ok(format!("{} vantage points >800 at 1.0, {} <50 at 0.0", top.len(), bottom.len()))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_wifigap"))
        .args(args)
        .env("WIFIGAP_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("wifigap {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let name = p.file_name().unwrap().to_string_lossy();
            name == "report.json" || (name.starts_with("cdf_") && name.ends_with(".csv"))
        })
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "fixtures", "cohort.json"].iter().collect();
    let store = tmp.path().join("cohort.jsonl");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    run_cli(&["synth", "--seed", "1", "--spec", &s(&spec), "--out", &s(&store)])?;
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    run_cli(&["analyze", "--store", &s(&store), "--out-dir", &s(&a)])?;
    run_cli(&["analyze", "--store", &s(&store), "--out-dir", &s(&b)])?;
    run_cli(&["analyze", "--store", &s(&store), "--out-dir", &s(&c), "--window-hours", "6"])?;
    let (fa, fb, fc) = (artifacts(&a), artifacts(&b), artifacts(&c));
    ensure(fa.len() >= 3, || format!("only {} artifacts", fa.len()))?;
    ensure(fa == fb, || "second run differs".into())?;
    ensure(fa == fc, || "--window-hours 6 differs from the default".into())?;
    let report: Value = serde_json::from_slice(&fa["report.json"]).map_err(|e| e.to_string())?;
    ensure(report["vantage_points"] == 65, || format!("report has {} vantage points", report["vantage_points"]))?;
    Ok(format!("{} artifacts byte-identical across runs", fa.len()))
}

fn property<T: std::fmt::Debug>(name: &str, result: Result<(), TestError<T>>) -> Result<(), String> {
    result.map_err(|e| format!("{name}: {e}"))
}

// a fresh runner per property, since a runner counts successes across runs
fn runner() -> TestRunner {
    TestRunner::new(Config { cases: CASES, failure_persistence: None, ..Config::default() })
}

const CASES: u32 = 1000;
static CASES_RUN: AtomicUsize = AtomicUsize::new(0);

fn property_suite() -> Outcome {
    let started = Instant::now();

    let res = runner().run(&(1u64..u64::MAX / 16, 1e-3f64..1e4), |(bytes, secs)| {
        CASES_RUN.fetch_add(1, Ordering::Relaxed);
        let mbps = compute_throughput_mbps(bytes, secs).unwrap();
        let expected = bytes as f64 * 8.0 / secs / 1e6;
        prop_assert!((mbps - expected).abs() <= 1e-12 * expected);
        prop_assert!(compute_throughput_mbps(bytes, 0.0).is_err());
        prop_assert!(compute_throughput_mbps(bytes, -secs).is_err());
        Ok(())
    });
    property("throughput arithmetic", res)?;

    let res = runner().run(&(0u32..25, 0u64..1 << 36), |(shift, sent)| {
        CASES_RUN.fetch_add(1, Ordering::Relaxed);
        let cfg = TestConfig::default();
        let current = (cfg.initial_payload_bytes << shift).min(cfg.max_payload_bytes);
        let next = next_payload_size(current, sent, &cfg);
        prop_assert!(next <= cfg.max_payload_bytes);
        prop_assert!(next == current || next == current * 2);
        prop_assert_eq!(next == current * 2, (current as u64) < sent / 16 && current * 2 <= cfg.max_payload_bytes);
        Ok(())
    });
    property("payload growth cap", res)?;

    let res = runner().run(&proptest::collection::vec(0.0f64..=1.0, 1..200), |values| {
        CASES_RUN.fetch_add(1, Ordering::Relaxed);
        let cdf = prevalence_cdf(&values).unwrap();
        for pair in cdf.windows(2) {
            prop_assert!(pair[0].value < pair[1].value);
            prop_assert!(pair[0].cumulative_fraction < pair[1].cumulative_fraction);
        }
        prop_assert_eq!(cdf.last().unwrap().cumulative_fraction, 1.0);
        Ok(())
    });
    property("cdf monotonicity", res)?;

    let res = runner().run(&(1e-3f64..1e4, 1e-3f64..1e4), |(wifi, access)| {
        CASES_RUN.fetch_add(1, Ordering::Relaxed);
        prop_assert_eq!(effective_throughput(wifi, access).unwrap(), wifi.min(access));
        Ok(())
    });
    property("effective throughput is the minimum", res)?;

    let res = runner().run(&(1e-6f64..5000.0), |mbps| {
        CASES_RUN.fetch_add(1, Ordering::Relaxed);
        let tier = SpeedTier::from_mbps(mbps).unwrap();
        let hits = SpeedTier::ALL
            .iter()
            .enumerate()
            .filter(|(i, t)| {
                let upper = SpeedTier::ALL.get(i + 1).map_or(f64::INFINITY, |n| n.lower_bound_mbps());
                t.lower_bound_mbps() <= mbps && mbps < upper
            })
            .map(|(_, t)| *t)
            .collect::<Vec<_>>();
        prop_assert_eq!(hits, vec![tier]);
        Ok(())
    });
    property("tier partition", res)?;

    let res = runner().run(
        &(proptest::collection::vec(1e-3f64..2000.0, 1..120), any::<u64>()),
        |(values, seed)| {
            CASES_RUN.fetch_add(1, Ordering::Relaxed);
            let mut shuffled = values.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.random_range(0..=i));
            }
            prop_assert_eq!(median(&values), median(&shuffled));
            Ok(())
        },
    );
    property("median permutation invariance", res)?;

    let res = runner().run(&(any::<u64>(), 2usize..80), |(seed, n)| {
        CASES_RUN.fetch_add(1, Ordering::Relaxed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples: Vec<ThroughputSample> = (0..n)
            .map(|_| {
                let ts = Utc.timestamp_opt(rng.random_range(0..10 * 21_600), 0).unwrap();
                let path = if rng.random_bool(0.5) { PathKind::LanWifi } else { PathKind::WanAccess };
                let bytes = rng.random_range(1_000u64..100_000_000);
                ThroughputSample::from_transfer(ts, "hh", "d", path, bytes, 10.0, "p").unwrap()
            })
            .collect();
        let a = resample_windows(&samples, 21_600);
        for i in (1..samples.len()).rev() {
            samples.swap(i, rng.random_range(0..=i));
        }
        prop_assert_eq!(a, resample_windows(&samples, 21_600));
        Ok(())
    });
    property("window medians permutation invariance", res)?;

    let ran = CASES_RUN.load(Ordering::Relaxed);
    ensure(ran >= 7 * CASES as usize, || format!("only {ran} cases ran"))?;
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("7 properties, {ran} cases in {:.2} s", elapsed.as_secs_f64()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("loopback throughput fidelity (5/50/500 Mbps, +-10%)", loopback_fidelity),
        ("pipeline oracle equivalence (10,000 samples, 30 households)", oracle_equivalence),
        ("anchored examples", anchored_examples),
        ("split reproduction (52 households -> 65 vantage points)", split_reproduction),
        ("construction-forced tier prevalence (WiFi cap 400 Mbps)", construction_forced_tiers),
        ("determinism of analyze artifacts", determinism),
        ("property suite (>= 1000 cases each, < 1 min)", property_suite),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
