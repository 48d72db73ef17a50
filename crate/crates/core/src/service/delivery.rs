//! Push delivery of notifications and advisories to consumer callbacks.
//!
//! Each subscription gets its own FIFO queue drained by one task, so pushes
//! for a subscription arrive in dispatch order. A push is retried with
//! exponential backoff and dropped (with a log line) once the attempts run
//! out.

use std::collections::HashMap;
use std::future::Future;
use std::pin::Pin;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, Notify};

use super::wire::WireEnvelope;

pub type BoxFuture<'a, T> = Pin<Box<dyn Future<Output = T> + Send + 'a>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff_ms: 100,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Wait before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = self.multiplier.powi(retry.saturating_sub(1) as i32);
        Duration::from_millis((self.initial_backoff_ms as f64 * factor) as u64)
    }
}

/// Transport used to reach a consumer callback address.
pub trait CallbackSink: Send + Sync {
    fn deliver<'a>(&'a self, address: &'a str, envelope: &'a WireEnvelope) -> BoxFuture<'a, Result<(), String>>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeliveryStatus {
    Delivered { attempts: u32 },
    Dropped { attempts: u32, last_error: String },
}

pub async fn push_notification(
    sink: &dyn CallbackSink,
    callback_address: &str,
    envelope: &WireEnvelope,
    policy: &RetryPolicy,
) -> DeliveryStatus {
    let attempts = policy.attempts.max(1);
    let mut last_error = String::new();
    for attempt in 1..=attempts {
        if attempt > 1 {
            tokio::time::sleep(policy.backoff(attempt - 1)).await;
        }
        match sink.deliver(callback_address, envelope).await {
            Ok(()) => return DeliveryStatus::Delivered { attempts: attempt },
            Err(e) => {
                tracing::debug!(callback_address, attempt, error = %e, "push failed");
                last_error = e;
            }
        }
    }
    tracing::warn!(
        callback_address,
        request_id = %envelope.request_id,
        error = %last_error,
        "dropping push after {attempts} attempts"
    );
    DeliveryStatus::Dropped { attempts, last_error }
}

/// Posts envelopes as JSON to the callback URL.
pub struct HttpSink {
    client: reqwest::Client,
}

impl HttpSink {
    pub fn new(timeout: Duration) -> Self {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("http client");
        HttpSink { client }
    }
}

impl CallbackSink for HttpSink {
    fn deliver<'a>(&'a self, address: &'a str, envelope: &'a WireEnvelope) -> BoxFuture<'a, Result<(), String>> {
        Box::pin(async move {
            let resp = self
                .client
                .post(address)
                .json(envelope)
                .send()
                .await
                .map_err(|e| e.to_string())?;
            if resp.status().is_success() {
                Ok(())
            } else {
                Err(format!("callback answered {}", resp.status()))
            }
        })
    }
}

struct Job {
    address: String,
    envelope: WireEnvelope,
}

/// Per-subscription FIFO dispatch queues.
#[derive(Clone)]
pub struct Dispatcher {
    inner: Arc<DispatcherInner>,
}

struct DispatcherInner {
    sink: Arc<dyn CallbackSink>,
    policy: RetryPolicy,
    queues: Mutex<HashMap<String, mpsc::UnboundedSender<Job>>>,
    pending: AtomicUsize,
    idle: Notify,
    delivered: AtomicUsize,
    dropped: AtomicUsize,
}

impl Dispatcher {
    pub fn new(sink: Arc<dyn CallbackSink>, policy: RetryPolicy) -> Self {
        Dispatcher {
            inner: Arc::new(DispatcherInner {
                sink,
                policy,
                queues: Mutex::new(HashMap::new()),
                pending: AtomicUsize::new(0),
                idle: Notify::new(),
                delivered: AtomicUsize::new(0),
                dropped: AtomicUsize::new(0),
            }),
        }
    }

    /// Queues a push. Must be called from within a tokio runtime.
    pub fn enqueue(&self, subscription_id: &str, address: String, envelope: WireEnvelope) {
        self.inner.pending.fetch_add(1, Ordering::SeqCst);
        let mut queues = self.inner.queues.lock().unwrap();
        let tx = queues
            .entry(subscription_id.to_string())
            .or_insert_with(|| self.spawn_worker());
        if let Err(mpsc::error::SendError(job)) = tx.send(Job { address, envelope }) {
            // worker gone; start a fresh one
            let tx = self.spawn_worker();
            let _ = tx.send(job);
            queues.insert(subscription_id.to_string(), tx);
        }
    }

    /// Closes the queue of a removed subscription once it drains.
    pub fn close(&self, subscription_id: &str) {
        self.inner.queues.lock().unwrap().remove(subscription_id);
    }

    pub fn pending(&self) -> usize {
        self.inner.pending.load(Ordering::SeqCst)
    }

    pub fn delivered(&self) -> usize {
        self.inner.delivered.load(Ordering::SeqCst)
    }

    pub fn dropped(&self) -> usize {
        self.inner.dropped.load(Ordering::SeqCst)
    }

    /// Resolves once no push is queued or in flight.
    pub async fn wait_idle(&self) {
        loop {
            let notified = self.inner.idle.notified();
            if self.pending() == 0 {
                return;
            }
            notified.await;
        }
    }

    fn spawn_worker(&self) -> mpsc::UnboundedSender<Job> {
        let (tx, mut rx) = mpsc::unbounded_channel::<Job>();
        let inner = Arc::clone(&self.inner);
        tokio::spawn(async move {
            while let Some(job) = rx.recv().await {
                let status = push_notification(inner.sink.as_ref(), &job.address, &job.envelope, &inner.policy).await;
                match status {
                    DeliveryStatus::Delivered { .. } => inner.delivered.fetch_add(1, Ordering::SeqCst),
                    DeliveryStatus::Dropped { .. } => inner.dropped.fetch_add(1, Ordering::SeqCst),
                };
                if inner.pending.fetch_sub(1, Ordering::SeqCst) == 1 {
                    inner.idle.notify_waiters();
                }
            }
        });
        tx
    }
}
