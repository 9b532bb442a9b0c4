use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::sync::{OwnedSemaphorePermit, Semaphore};
use tokio::time::{sleep_until, timeout, Instant};
use tracing::debug;

use crate::error::{Error, Result};

pub const DEFAULT_MAX_WAIT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    WanTest,
    LanTest,
}

struct Inner {
    semaphore: Arc<Semaphore>,
    last_release: Mutex<Option<Instant>>,
    min_gap: Duration,
    max_wait: Duration,
}

/// Serializes throughput tests on one agent.
///
/// At most one permit is out at a time; waiters are served in request
/// order, and a new test starts no sooner than `min_gap` after the previous
/// one released its permit.
#[derive(Clone)]
pub struct TestSlot {
    inner: Arc<Inner>,
}

impl TestSlot {
    pub fn new(min_gap: Duration) -> Self {
        Self::with_max_wait(min_gap, DEFAULT_MAX_WAIT)
    }

    pub fn with_max_wait(min_gap: Duration, max_wait: Duration) -> Self {
        TestSlot {
            inner: Arc::new(Inner {
                semaphore: Arc::new(Semaphore::new(1)),
                last_release: Mutex::new(None),
                min_gap,
                max_wait,
            }),
        }
    }

    /// Waits for exclusive use of the uplink; fails with [`Error::Busy`]
    /// after `max_wait`.
    pub async fn acquire(&self, kind: SlotKind) -> Result<SlotPermit> {
        let inner = &self.inner;
        let wait = async {
            let permit = inner
                .semaphore
                .clone()
                .acquire_owned()
                .await
                .expect("semaphore never closed");
            let last = *inner.last_release.lock().unwrap();
            if let Some(released) = last {
                sleep_until(released + inner.min_gap).await;
            }
            permit
        };
        let permit = timeout(inner.max_wait, wait)
            .await
            .map_err(|_| Error::Busy(inner.max_wait))?;
        debug!(?kind, "test slot granted");
        Ok(SlotPermit {
            _permit: permit,
            inner: self.inner.clone(),
            kind,
        })
    }
}

/// Exclusive right to run one test; the gap clock starts when it drops.
pub struct SlotPermit {
    _permit: OwnedSemaphorePermit,
    inner: Arc<Inner>,
    kind: SlotKind,
}

impl SlotPermit {
    pub fn kind(&self) -> SlotKind {
        self.kind
    }
}

impl Drop for SlotPermit {
    fn drop(&mut self) {
        *self.inner.last_release.lock().unwrap() = Some(Instant::now());
    }
}
