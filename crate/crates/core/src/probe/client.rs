use std::time::Duration;

use chrono::Utc;
use futures::StreamExt;
use tokio::time::{timeout, timeout_at, Instant};
use tokio_tungstenite::tungstenite::protocol::frame::coding::CloseCode;
use tokio_tungstenite::tungstenite::protocol::WebSocketConfig;
use tokio_tungstenite::tungstenite::Message;

use super::server::CLOSE_TRY_AGAIN_LATER;
use super::{parse_snapshot, MeasurementSnapshot, TestConfig, DOWNLOAD_PATH};
use crate::error::{Error, Result};
use crate::sample::{PathKind, ThroughputSample};

pub const TOOL_TAG: &str = "ndt7-download";

/// Fraction of the configured duration a test must run to count.
const MIN_COMPLETED_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestLabels {
    pub household_id: String,
    pub device_id: String,
    pub path: PathKind,
}

/// Everything observed during one test.
#[derive(Debug, Clone)]
pub struct TestOutcome {
    pub sample: ThroughputSample,
    pub snapshots: Vec<MeasurementSnapshot>,
}

#[derive(Debug, Clone)]
pub struct DownloadClient {
    config: TestConfig,
    connect_timeout: Duration,
}

impl DownloadClient {
    pub fn new(config: TestConfig) -> Result<Self> {
        config.validate()?;
        Ok(DownloadClient {
            config,
            connect_timeout: Duration::from_secs(10),
        })
    }

    pub fn with_connect_timeout(mut self, t: Duration) -> Self {
        self.connect_timeout = t;
        self
    }

    pub async fn run(&self, endpoint: &str, labels: &TestLabels) -> Result<TestOutcome> {
        let url = download_url(endpoint)?;
        let duration = self.config.duration();
        let ws_config = WebSocketConfig::default()
            .max_message_size(Some(64 << 20))
            .max_frame_size(Some(32 << 20));

        let timestamp = Utc::now();
        let start = Instant::now();
        let (mut ws, _) = timeout(
            self.connect_timeout,
            tokio_tungstenite::connect_async_with_config(url.as_str(), Some(ws_config), false),
        )
        .await
        .map_err(|_| Error::Transport(format!("connect to {url} timed out")))?
        .map_err(|e| Error::Transport(format!("connect to {url}: {e}")))?;

        // The server closes after the configured duration; give it generous
        // slack before giving up on a stalled stream.
        let hard_deadline = start + duration * 2 + Duration::from_secs(5);
        let required = self.config.duration_seconds * MIN_COMPLETED_FRACTION;
        let mut received = 0u64;
        let mut snapshots: Vec<MeasurementSnapshot> = Vec::new();

        loop {
            let msg = match timeout_at(hard_deadline, ws.next()).await {
                Err(_) => {
                    let _ = ws.close(None).await;
                    break;
                }
                Ok(None) => break,
                Ok(Some(Err(e))) => {
                    let elapsed = start.elapsed().as_secs_f64();
                    if elapsed < required {
                        return Err(Error::IncompleteTest {
                            elapsed_seconds: elapsed,
                            required_seconds: required,
                        });
                    }
                    return Err(Error::Transport(format!("download stream: {e}")));
                }
                Ok(Some(Ok(msg))) => msg,
            };
            match msg {
                Message::Binary(data) => received += data.len() as u64,
                Message::Text(text) => {
                    let snap = parse_snapshot(text.as_str())?;
                    if let Some(prev) = snapshots.last() {
                        if snap.elapsed_seconds < prev.elapsed_seconds
                            || snap.bytes_transferred < prev.bytes_transferred
                        {
                            return Err(Error::Protocol(format!(
                                "snapshot went backwards: {prev:?} then {snap:?}"
                            )));
                        }
                    }
                    snapshots.push(snap);
                }
                Message::Close(frame) => {
                    if let Some(f) = frame {
                        if f.code == CloseCode::from(CLOSE_TRY_AGAIN_LATER) {
                            return Err(Error::Transport(format!("server busy: {}", f.reason)));
                        }
                    }
                    break;
                }
                _ => {}
            }
        }

        let elapsed = start.elapsed().as_secs_f64();
        if elapsed < required {
            return Err(Error::IncompleteTest {
                elapsed_seconds: elapsed,
                required_seconds: required,
            });
        }
        if received == 0 {
            return Err(Error::Protocol("stream closed without payload".into()));
        }
        let sample = ThroughputSample::from_transfer(
            timestamp,
            labels.household_id.clone(),
            labels.device_id.clone(),
            labels.path,
            received,
            elapsed,
            TOOL_TAG,
        )?;
        Ok(TestOutcome { sample, snapshots })
    }
}

/// Accepts `host:port`, `ws://host:port` or a full `ws://host:port/path` URL.
fn download_url(endpoint: &str) -> Result<String> {
    let endpoint = endpoint.trim();
    if endpoint.is_empty() {
        return Err(Error::invalid("empty endpoint"));
    }
    if endpoint.starts_with("wss://") || endpoint.starts_with("https://") {
        return Err(Error::invalid("TLS endpoints are not supported; use ws://"));
    }
    let rest = match endpoint.split_once("://") {
        Some(("ws", rest)) | Some(("http", rest)) => rest,
        Some((scheme, _)) => return Err(Error::invalid(format!("unsupported scheme {scheme:?}"))),
        None => endpoint,
    };
    let (authority, path) = match rest.find('/') {
        Some(i) if &rest[i..] != "/" => (&rest[..i], &rest[i..]),
        Some(i) => (&rest[..i], DOWNLOAD_PATH),
        None => (rest, DOWNLOAD_PATH),
    };
    if authority.is_empty() {
        return Err(Error::invalid(format!("endpoint {endpoint:?} has no host")));
    }
    Ok(format!("ws://{authority}{path}"))
}

/// Runs one download test and returns the resulting sample.
pub async fn run_download_test(
    endpoint: &str,
    config: &TestConfig,
    labels: &TestLabels,
) -> Result<ThroughputSample> {
    Ok(DownloadClient::new(config.clone())?.run(endpoint, labels).await?.sample)
}
