use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::Utc;
use futures::future::BoxFuture;
use tokio::task::JoinHandle;
use tokio::time::{sleep_until, Instant};
use tracing::{error, info, warn};

use super::schedule::{build_schedule, ScheduledEvent};
use super::slot::{SlotKind, TestSlot};
use super::{AgentConfig, ScheduleConfig};
use crate::error::{Error, Result};
use crate::probe::{DownloadClient, DownloadService, ServerHandle, TestConfig, TestLabels};
use crate::sample::{PathKind, ThroughputSample};
use crate::store::{api_router, ApiState, SampleSink, Store};

/// Runs one WAN throughput test.
pub trait Prober: Send + Sync {
    fn probe<'a>(&'a self, endpoint: &'a str, labels: &'a TestLabels) -> BoxFuture<'a, Result<ThroughputSample>>;
}

/// Probes with the streaming download test.
pub struct NdtProber {
    client: DownloadClient,
}

impl NdtProber {
    pub fn new(config: TestConfig) -> Result<Self> {
        Ok(NdtProber { client: DownloadClient::new(config)? })
    }
}

impl Prober for NdtProber {
    fn probe<'a>(&'a self, endpoint: &'a str, labels: &'a TestLabels) -> BoxFuture<'a, Result<ThroughputSample>> {
        Box::pin(async move { Ok(self.client.run(endpoint, labels).await?.sample) })
    }
}

/// Bounded retry queue in front of a sample sink.
pub struct PendingWrites {
    sink: Arc<dyn SampleSink>,
    queue: Mutex<VecDeque<ThroughputSample>>,
    capacity: usize,
}

impl PendingWrites {
    pub fn new(sink: Arc<dyn SampleSink>, capacity: usize) -> Self {
        PendingWrites {
            sink,
            queue: Mutex::new(VecDeque::new()),
            capacity: capacity.max(1),
        }
    }

    pub fn pending(&self) -> usize {
        self.queue.lock().unwrap().len()
    }

    /// Queues `sample` and tries to drain the queue; returns whether it was
    /// persisted right away.
    pub fn submit(&self, sample: ThroughputSample) -> bool {
        {
            let mut q = self.queue.lock().unwrap();
            q.push_back(sample);
            if q.len() > self.capacity {
                let lost = q.pop_front().unwrap();
                error!(timestamp = %lost.timestamp_utc, "write queue full, dropping oldest sample");
            }
        }
        self.flush();
        self.pending() == 0
    }

    /// Appends queued samples in order until one fails.
    pub fn flush(&self) -> usize {
        let mut q = self.queue.lock().unwrap();
        let mut written = 0;
        while let Some(front) = q.front() {
            match self.sink.append(front.clone()) {
                Ok(id) => {
                    info!(record_id = id, path = %front.path, mbps = front.throughput_mbps, "sample stored");
                    q.pop_front();
                    written += 1;
                }
                Err(e) => {
                    warn!(error = %e, pending = q.len(), "store write failed, will retry");
                    break;
                }
            }
        }
        written
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SlotOutcome {
    Persisted,
    Queued,
    Skipped(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SchedulerStats {
    pub persisted: usize,
    pub queued: usize,
    pub skipped: usize,
}

/// Fires WAN tests, serialized through the shared test slot.
pub struct WanScheduler {
    config: ScheduleConfig,
    device_id: String,
    slot: TestSlot,
    prober: Arc<dyn Prober>,
    writes: Arc<PendingWrites>,
}

impl WanScheduler {
    pub fn new(
        config: ScheduleConfig,
        device_id: impl Into<String>,
        slot: TestSlot,
        prober: Arc<dyn Prober>,
        writes: Arc<PendingWrites>,
    ) -> Self {
        WanScheduler {
            config,
            device_id: device_id.into(),
            slot,
            prober,
            writes,
        }
    }

    pub async fn run_slot(&self) -> SlotOutcome {
        self.writes.flush();
        let permit = match self.slot.acquire(SlotKind::WanTest).await {
            Ok(p) => p,
            Err(e) => {
                warn!(error = %e, "WAN test skipped");
                return SlotOutcome::Skipped(e.to_string());
            }
        };
        let labels = TestLabels {
            household_id: self.config.household_id.clone(),
            device_id: self.device_id.clone(),
            path: PathKind::WanAccess,
        };
        let result = self.prober.probe(&self.config.wan_endpoint, &labels).await;
        drop(permit);
        match result {
            Ok(sample) => {
                if self.writes.submit(sample) {
                    SlotOutcome::Persisted
                } else {
                    SlotOutcome::Queued
                }
            }
            Err(e) => {
                warn!(endpoint = %self.config.wan_endpoint, error = %e, "WAN test failed, skipping slot");
                SlotOutcome::Skipped(e.to_string())
            }
        }
    }

    /// Runs `events` with offsets measured from `start`.
    pub async fn run_events(&self, start: Instant, events: &[ScheduledEvent]) -> SchedulerStats {
        let mut stats = SchedulerStats::default();
        for ev in events {
            sleep_until(start + Duration::from_secs(ev.offset_seconds)).await;
            match self.run_slot().await {
                SlotOutcome::Persisted => stats.persisted += 1,
                SlotOutcome::Queued => stats.queued += 1,
                SlotOutcome::Skipped(_) => stats.skipped += 1,
            }
        }
        stats
    }

    /// Schedules week-long batches back to back, forever.
    pub async fn run_forever(&self, seed: u64) {
        const HORIZON: u64 = 7 * 86_400;
        let mut start = Instant::now();
        for cycle in 0u64.. {
            let events = match build_schedule(&self.config, Utc::now(), HORIZON, seed.wrapping_add(cycle)) {
                Ok(ev) => ev,
                Err(e) => {
                    error!(error = %e, "cannot build schedule");
                    return;
                }
            };
            let last = events.last().map_or(HORIZON, |e| e.offset_seconds);
            let stats = self.run_events(start, &events).await;
            info!(cycle, persisted = stats.persisted, skipped = stats.skipped, "schedule cycle done");
            start += Duration::from_secs(last);
        }
    }
}

/// Builder for the full daemon.
pub struct Agent {
    config: AgentConfig,
    store: Arc<Store>,
    prober: Option<Arc<dyn Prober>>,
}

impl Agent {
    pub fn new(config: AgentConfig, store: Arc<Store>) -> Self {
        Agent { config, store, prober: None }
    }

    pub fn with_prober(mut self, prober: Arc<dyn Prober>) -> Self {
        self.prober = Some(prober);
        self
    }

    /// Starts the LAN server and the WAN scheduler.
    pub async fn start(self) -> Result<AgentHandle> {
        self.config.validate()?;
        let cfg = self.config;
        let slot = TestSlot::new(Duration::from_secs(cfg.schedule.min_gap_seconds));

        let download = DownloadService::new(cfg.test.clone())?.with_slot(slot.clone());
        let api = api_router(ApiState {
            store: self.store.clone(),
            params: Default::default(),
            token: cfg.api_token.clone(),
            static_dir: cfg.static_dir.clone(),
        });
        let router = download.router().merge(api);
        let server = crate::probe::spawn_router(&cfg.lan_bind, router, download.stats()).await?;

        let prober = match self.prober {
            Some(p) => p,
            None => Arc::new(NdtProber::new(cfg.test.clone())?),
        };
        let writes = Arc::new(PendingWrites::new(self.store.clone(), 1024));
        let scheduler = WanScheduler::new(cfg.schedule.clone(), cfg.device_id.clone(), slot, prober, writes);
        let seed = cfg.seed.unwrap_or_else(|| Utc::now().timestamp() as u64);
        let task = tokio::spawn(async move { scheduler.run_forever(seed).await });
        info!(
            household = %cfg.schedule.household_id,
            lan = %server.local_addr(),
            wan = %cfg.schedule.wan_endpoint,
            "agent started"
        );
        Ok(AgentHandle { server, scheduler: task })
    }
}

pub struct AgentHandle {
    server: ServerHandle,
    scheduler: JoinHandle<()>,
}

impl AgentHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.server.local_addr()
    }

    pub async fn shutdown(self) -> Result<()> {
        self.scheduler.abort();
        self.server.shutdown().await
    }

    /// Runs until the LAN server stops.
    pub async fn wait(self) -> Result<()> {
        let r = self.server.wait().await;
        self.scheduler.abort();
        r.and(Err(Error::Transport("LAN server exited".into())))
    }
}
