use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use tracing::{info, warn};
use wifigap::agent::{Agent, AgentConfig};
use wifigap::analysis::{
    analyze_samples, cdf_csv, tier_slug, AnalysisParams, SpeedTier, DEFAULT_FREQUENT_MIN,
    DEFAULT_MIN_WINDOWS, DEFAULT_RARE_MAX, DEFAULT_RATIO_THRESHOLD, DEFAULT_SUSTAIN_WINDOWS,
};
use wifigap::probe::{spawn_router, DownloadClient, DownloadService, TestConfig, TestLabels};
use wifigap::sample::rfc3339;
use wifigap::store::{api_router, ApiState, ExportFormat, QueryFilter, Store};
use wifigap::synth::{self, CohortSpec};
use wifigap::{Error, PathKind};

#[derive(Parser)]
#[command(name = "wifigap", version, about = "Home WiFi versus access throughput measurement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a download test server.
    Serve(ServeArgs),
    /// Run one download test and print the sample as JSON.
    Test(TestArgs),
    /// Run the measurement agent.
    Agent(AgentArgs),
    /// Append samples from a JSONL or CSV file to a store.
    Import(ImportArgs),
    /// Write stored samples as JSONL or CSV.
    Export(ExportArgs),
    /// Run the analysis pipeline and write report files.
    Analyze(AnalyzeArgs),
    /// Print the cohort report.
    Report(ReportArgs),
    /// Generate a synthetic cohort as store-format JSONL.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ProbeFlags {
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, default_value_t = 0.25)]
    snapshot_interval: f64,
}

impl ProbeFlags {
    fn config(&self) -> TestConfig {
        TestConfig {
            duration_seconds: self.duration,
            snapshot_interval_seconds: self.snapshot_interval,
            ..TestConfig::default()
        }
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "0.0.0.0:4443")]
    bind: String,
    /// Pace every test to this rate.
    #[arg(long)]
    rate_limit_mbps: Option<f64>,
    /// Also serve the HTTP API over this store.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Serve browser client assets at `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    #[command(flatten)]
    probe: ProbeFlags,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    endpoint: String,
    #[arg(long, default_value = "wan_access")]
    path: PathKind,
    #[arg(long, default_value = "local")]
    household: String,
    #[arg(long, default_value = "cli")]
    device: String,
    /// Append the sample to this store.
    #[arg(long)]
    store: Option<PathBuf>,
    #[command(flatten)]
    probe: ProbeFlags,
}

#[derive(Args)]
struct AgentArgs {
    /// TOML config; WIFIGAP_* environment variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    household: Option<String>,
    #[arg(long)]
    path: Option<PathKind>,
    /// Inclusive lower bound, RFC 3339.
    #[arg(long)]
    from: Option<String>,
    /// Exclusive upper bound, RFC 3339.
    #[arg(long)]
    to: Option<String>,
}

#[derive(Args)]
struct ImportArgs {
    #[arg(long)]
    store: PathBuf,
    /// Input file; standard input when omitted.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long, default_value = "jsonl")]
    format: ExportFormat,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = "jsonl")]
    format: ExportFormat,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    filter: FilterArgs,
}

#[derive(Args)]
struct PipelineFlags {
    #[arg(long, default_value_t = 6)]
    window_hours: u32,
    #[arg(long, default_value_t = DEFAULT_MIN_WINDOWS)]
    min_windows: usize,
    #[arg(long, default_value_t = DEFAULT_RATIO_THRESHOLD)]
    ratio_threshold: f64,
    #[arg(long, default_value_t = DEFAULT_SUSTAIN_WINDOWS)]
    sustain_windows: usize,
    #[arg(long, default_value_t = DEFAULT_RARE_MAX)]
    rare_max: f64,
    #[arg(long, default_value_t = DEFAULT_FREQUENT_MIN)]
    frequent_min: f64,
    /// JSON object mapping vantage ids to tier labels.
    #[arg(long)]
    tier_metadata: Option<PathBuf>,
}

impl PipelineFlags {
    fn params(&self) -> Result<AnalysisParams, Failure> {
        let tier_metadata = match &self.tier_metadata {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
                serde_json::from_str::<BTreeMap<String, SpeedTier>>(&text)
                    .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
            }
            None => BTreeMap::new(),
        };
        let params = AnalysisParams {
            window_seconds: self
                .window_hours
                .checked_mul(3600)
                .ok_or_else(|| Failure::usage("window-hours too large"))?,
            min_windows: self.min_windows,
            ratio_threshold: self.ratio_threshold,
            sustain_windows: self.sustain_windows,
            rare_max: self.rare_max,
            frequent_min: self.frequent_min,
            tier_metadata,
        };
        params.validate().map_err(|e| Failure::usage(e.to_string()))?;
        Ok(params)
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// JSON cohort spec; flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    households: Option<usize>,
    #[arg(long)]
    plan_changes: Option<usize>,
    #[arg(long)]
    days: Option<u32>,
    /// Same WiFi capacity for every household.
    #[arg(long)]
    wifi_cap: Option<f64>,
    /// Comma-separated nominal plan speeds replacing the default layout.
    #[arg(long, value_delimiter = ',')]
    access_tiers: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) => Failure::usage(e.to_string()),
            _ => Failure::runtime(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("WIFIGAP_LOG").unwrap_or_else(|_| "info".into()),
        )
        .init();

    let result = match cli.command {
        Command::Serve(a) => block_on(cmd_serve(a)),
        Command::Test(a) => block_on(cmd_test(a)),
        Command::Agent(a) => block_on(cmd_agent(a)),
        Command::Import(a) => cmd_import(a),
        Command::Export(a) => cmd_export(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Report(a) => cmd_report(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn block_on<F: std::future::Future<Output = Result<(), Failure>>>(f: F) -> Result<(), Failure> {
    tokio::runtime::Runtime::new()?.block_on(f)
}

async fn cmd_serve(a: ServeArgs) -> Result<(), Failure> {
    let mut service = DownloadService::new(a.probe.config())?;
    if let Some(mbps) = a.rate_limit_mbps {
        service = service.with_rate_limit(mbps)?;
    }
    let mut router = service.router();
    if let Some(path) = &a.store {
        let mut state = ApiState::new(Arc::new(Store::open(path)?));
        state.static_dir = a.static_dir.clone();
        router = router.merge(api_router(state));
    }
    let server = spawn_router(&a.bind, router, service.stats()).await?;
    println!("{}", server.download_url());
    tokio::signal::ctrl_c().await?;
    info!("shutting down");
    server.shutdown().await?;
    Ok(())
}

async fn cmd_test(a: TestArgs) -> Result<(), Failure> {
    let store = a.store.as_ref().map(Store::open).transpose()?;
    let labels = TestLabels {
        household_id: a.household,
        device_id: a.device,
        path: a.path,
    };
    let outcome = DownloadClient::new(a.probe.config())?.run(&a.endpoint, &labels).await?;
    if let Some(store) = store {
        store.append_sample(outcome.sample.clone())?;
    }
    println!("{}", serde_json::to_string(&outcome.sample).expect("sample serializes"));
    Ok(())
}

async fn cmd_agent(a: AgentArgs) -> Result<(), Failure> {
    let mut config = match &a.config {
        Some(path) => AgentConfig::load(path)?,
        None => AgentConfig::default(),
    };
    config.apply_env(|k| std::env::var(k).ok())?;
    config.validate()?;
    let store = Arc::new(Store::open(&config.store_path)?);
    let handle = Agent::new(config, store).start().await?;
    tokio::signal::ctrl_c().await?;
    info!("shutting down");
    handle.shutdown().await?;
    Ok(())
}

fn cmd_import(a: ImportArgs) -> Result<(), Failure> {
    let input: Box<dyn Read> = match &a.input {
        Some(p) => Box::new(BufReader::new(File::open(p)?)),
        None => Box::new(io::stdin().lock()),
    };
    let store = Store::open(&a.store)?;
    let n = store.import_records(input, a.format)?;
    info!(records = n, store = %a.store.display(), "imported");
    Ok(())
}

fn parse_time(flag: &str, value: &Option<String>) -> Result<Option<DateTime<Utc>>, Failure> {
    value
        .as_deref()
        .map(|v| rfc3339::parse(v).map_err(|e| Failure::usage(format!("--{flag} {v}: {e}"))))
        .transpose()
}

fn cmd_export(a: ExportArgs) -> Result<(), Failure> {
    let filter = QueryFilter {
        household_id: a.filter.household.clone(),
        path: a.filter.path,
        from_utc: parse_time("from", &a.filter.from)?,
        to_utc: parse_time("to", &a.filter.to)?,
    };
    filter.validate()?;
    let store = Store::open(&a.store)?;
    match &a.out {
        Some(path) => {
            let mut buf = Vec::new();
            store.export_records(&filter, a.format, &mut buf)?;
            write_atomic(&[(path.clone(), buf)])?;
        }
        None => {
            store.export_records(&filter, a.format, io::stdout().lock())?;
        }
    }
    Ok(())
}

fn load_report(store: &Path, flags: &PipelineFlags) -> Result<(wifigap::analysis::CohortAnalysis, AnalysisParams), Failure> {
    let params = flags.params()?;
    if !store.exists() {
        return Err(Failure::runtime(format!("store {} does not exist", store.display())));
    }
    let samples = Store::open(store)?.all_samples();
    let analysis = analyze_samples(&samples, &params)?;
    Ok((analysis, params))
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<(), Failure> {
    let (analysis, params) = load_report(&a.store, &a.pipeline)?;
    let report = analysis.report(&params)?;
    let dir = &a.out_dir;
    let mut files = vec![
        (dir.join("report.json"), report.to_json().into_bytes()),
        (dir.join("report.txt"), report.to_text().into_bytes()),
        (dir.join("vantage.json"), {
            let mut v = serde_json::to_string_pretty(&analysis.stats).expect("stats serialize");
            v.push('\n');
            v.into_bytes()
        }),
        (dir.join("cdf_prevalence.csv"), cdf_csv(&report.prevalence_cdf).into_bytes()),
        (dir.join("cdf_sample_error.csv"), cdf_csv(&report.sample_error_cdf).into_bytes()),
    ];
    for t in &report.prevalence_cdf_by_tier {
        files.push((
            dir.join(format!("cdf_prevalence_{}.csv", tier_slug(t.tier))),
            cdf_csv(&t.points).into_bytes(),
        ));
    }
    fs::create_dir_all(dir)?;
    write_atomic(&files)?;
    info!(vantage_points = report.vantage_points, out_dir = %dir.display(), "analysis written");
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<(), Failure> {
    let (analysis, params) = load_report(&a.store, &a.pipeline)?;
    let report = analysis.report(&params)?;
    let text = if a.json { report.to_json() } else { report.to_text() };
    io::stdout().lock().write_all(text.as_bytes())?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), Failure> {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str::<CohortSpec>(&text)
                .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
        }
        None => CohortSpec::default(),
    };
    if let Some(v) = a.households {
        spec.households = v;
    }
    if let Some(v) = a.plan_changes {
        spec.plan_changes = v;
    }
    if let Some(v) = a.days {
        spec.days = v;
    }
    if a.wifi_cap.is_some() {
        spec.wifi_cap_mbps = a.wifi_cap;
    }
    if a.access_tiers.is_some() {
        spec.access_tiers_mbps = a.access_tiers.clone();
    }
    spec.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let samples = synth::generate(&spec, a.seed)?;
    write_atomic(&[(a.out.clone(), synth::to_jsonl(&samples).into_bytes())])?;
    info!(samples = samples.len(), out = %a.out.display(), "cohort written");
    Ok(())
}

/// Stages every file next to its target, then renames them all into place.
fn write_atomic(files: &[(PathBuf, Vec<u8>)]) -> Result<(), Failure> {
    let mut staged = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)
            .map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        staged.push((tmp, path));
    }
    for (tmp, path) in staged {
        tmp.persist(path).map_err(|e| {
            warn!(path = %path.display(), "rename failed");
            Failure::runtime(format!("{}: {}", path.display(), e.error))
        })?;
    }
    Ok(())
}
