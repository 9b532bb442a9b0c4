use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::stream::{SplitSink, SplitStream};
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tokio::time::{interval_at, sleep_until, Instant, MissedTickBehavior};
use tracing::{info, warn};

use super::ratelimit::TokenBucket;
use super::{next_payload_size, MeasurementSnapshot, TestConfig, DOWNLOAD_PATH};
use crate::agent::{SlotKind, TestSlot};
use crate::error::{Error, Result};

/// WebSocket close code asking the client to retry later.
pub(crate) const CLOSE_TRY_AGAIN_LATER: u16 = 1013;

/// Per-server connection counters.
#[derive(Debug, Default)]
pub struct ServerStats {
    pub started: AtomicU64,
    pub completed: AtomicU64,
    pub aborted: AtomicU64,
    pub rejected: AtomicU64,
    pub bytes_sent: AtomicU64,
}

impl ServerStats {
    pub fn completed(&self) -> u64 {
        self.completed.load(Ordering::SeqCst)
    }

    pub fn aborted(&self) -> u64 {
        self.aborted.load(Ordering::SeqCst)
    }

    pub fn rejected(&self) -> u64 {
        self.rejected.load(Ordering::SeqCst)
    }
}

/// The download endpoint, optionally rate-limited per connection and
/// serialized through a shared [`TestSlot`].
#[derive(Clone)]
pub struct DownloadService {
    config: TestConfig,
    rate_limit_mbps: Option<f64>,
    slot: Option<TestSlot>,
    stats: Arc<ServerStats>,
}

impl DownloadService {
    pub fn new(config: TestConfig) -> Result<Self> {
        config.validate()?;
        Ok(DownloadService {
            config,
            rate_limit_mbps: None,
            slot: None,
            stats: Arc::default(),
        })
    }

    /// Paces every connection with a token bucket at `mbps`.
    pub fn with_rate_limit(mut self, mbps: f64) -> Result<Self> {
        if !(mbps.is_finite() && mbps > 0.0) {
            return Err(Error::invalid(format!("rate limit must be positive, got {mbps}")));
        }
        self.rate_limit_mbps = Some(mbps);
        Ok(self)
    }

    /// Each test holds `slot` for its whole transfer.
    pub fn with_slot(mut self, slot: TestSlot) -> Self {
        self.slot = Some(slot);
        self
    }

    pub fn stats(&self) -> Arc<ServerStats> {
        self.stats.clone()
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route(DOWNLOAD_PATH, get(upgrade))
            .with_state(Arc::new(self.clone()))
    }

    pub async fn serve(self, bind: &str) -> Result<ServerHandle> {
        let stats = self.stats();
        spawn_router(bind, self.router(), stats).await
    }

    async fn handle(self: Arc<Self>, socket: WebSocket) {
        let id = self.stats.started.fetch_add(1, Ordering::SeqCst) + 1;
        let mut socket = socket;
        let _permit = match &self.slot {
            Some(slot) => match slot.acquire(SlotKind::LanTest).await {
                Ok(permit) => Some(permit),
                Err(e) => {
                    self.stats.rejected.fetch_add(1, Ordering::SeqCst);
                    warn!(conn = id, error = %e, "download rejected");
                    let _ = socket
                        .send(Message::Close(Some(CloseFrame {
                            code: CLOSE_TRY_AGAIN_LATER,
                            reason: "test slot busy".into(),
                        })))
                        .await;
                    return;
                }
            },
            None => None,
        };

        let (mut tx, mut rx) = socket.split();
        let started = Instant::now();
        match self.stream(&mut tx, &mut rx).await {
            Ok(sent) => {
                self.stats.completed.fetch_add(1, Ordering::SeqCst);
                self.stats.bytes_sent.fetch_add(sent, Ordering::SeqCst);
                info!(
                    conn = id,
                    bytes = sent,
                    elapsed_s = started.elapsed().as_secs_f64(),
                    "download completed"
                );
                let _ = tx
                    .send(Message::Close(Some(CloseFrame {
                        code: axum::extract::ws::close_code::NORMAL,
                        reason: "".into(),
                    })))
                    .await;
            }
            Err(sent) => {
                self.stats.aborted.fetch_add(1, Ordering::SeqCst);
                self.stats.bytes_sent.fetch_add(sent, Ordering::SeqCst);
                warn!(
                    conn = id,
                    bytes = sent,
                    elapsed_s = started.elapsed().as_secs_f64(),
                    "download aborted by peer, partial transfer"
                );
            }
        }
    }

    /// Returns the payload bytes sent; `Err` carries the partial count when
    /// the peer went away.
    async fn stream(
        &self,
        tx: &mut SplitSink<WebSocket, Message>,
        rx: &mut SplitStream<WebSocket>,
    ) -> std::result::Result<u64, u64> {
        let cfg = &self.config;
        let start = Instant::now();
        let deadline = start + cfg.duration();
        let mut ticker = interval_at(start + cfg.snapshot_interval(), cfg.snapshot_interval());
        ticker.set_missed_tick_behavior(MissedTickBehavior::Skip);
        let mut bucket = self
            .rate_limit_mbps
            .map(|r| TokenBucket::new(r, cfg.initial_payload_bytes, start.into_std()));

        let mut size = cfg.initial_payload_bytes;
        let mut payload = Bytes::from(vec![0u8; size]);
        let mut sent = 0u64;
        let mut ready_at = start;
        let mut last_elapsed = 0.0;

        loop {
            tokio::select! {
                biased;
                incoming = rx.next() => match incoming {
                    Some(Ok(Message::Close(_))) | Some(Err(_)) | None => return Err(sent),
                    Some(Ok(_)) => {}
                },
                _ = ticker.tick() => {
                    let elapsed = start.elapsed().as_secs_f64();
                    if elapsed > last_elapsed {
                        last_elapsed = elapsed;
                        let snap = MeasurementSnapshot { elapsed_seconds: elapsed, bytes_transferred: sent };
                        if tx.send(Message::Text(snap.to_json().into())).await.is_err() {
                            return Err(sent);
                        }
                    }
                },
                _ = sleep_until(ready_at) => {
                    if Instant::now() >= deadline {
                        return Ok(sent);
                    }
                    let now = Instant::now();
                    let wait = match bucket.as_mut() {
                        Some(b) => b.reserve(size, now.into_std()),
                        None => std::time::Duration::ZERO,
                    };
                    if tx.send(Message::Binary(payload.clone())).await.is_err() {
                        return Err(sent);
                    }
                    sent += size as u64;
                    ready_at = now + wait;
                    let next = next_payload_size(size, sent, cfg);
                    if next != size {
                        size = next;
                        payload = Bytes::from(vec![0u8; size]);
                    }
                },
            }
        }
    }
}

async fn upgrade(State(svc): State<Arc<DownloadService>>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| svc.handle(socket))
}

/// A running HTTP/WebSocket server.
pub struct ServerHandle {
    local_addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<io::Result<()>>,
    stats: Arc<ServerStats>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// `ws://` URL of the download endpoint.
    pub fn download_url(&self) -> String {
        format!("ws://{}{}", self.local_addr, DOWNLOAD_PATH)
    }

    pub fn stats(&self) -> &ServerStats {
        &self.stats
    }

    /// Runs until the server task exits.
    pub async fn wait(self) -> Result<()> {
        match self.task.await {
            Ok(r) => r.map_err(Error::from),
            Err(e) => Err(Error::Transport(format!("server task failed: {e}"))),
        }
    }

    pub async fn shutdown(mut self) -> Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.wait().await
    }
}

/// Serves `router` on `bind` until the handle is shut down.
pub async fn spawn_router(
    bind: &str,
    router: Router,
    stats: Arc<ServerStats>,
) -> Result<ServerHandle> {
    let listener = TcpListener::bind(bind)
        .await
        .map_err(|e| Error::Startup(format!("cannot bind {bind}: {e}")))?;
    let local_addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, router)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    info!(addr = %local_addr, "listening");
    Ok(ServerHandle {
        local_addr,
        shutdown: Some(tx),
        task,
        stats,
    })
}

/// Starts a download server on `bind` with no rate limit.
pub async fn serve_download(bind: &str, config: TestConfig) -> Result<ServerHandle> {
    DownloadService::new(config)?.serve(bind).await
}
