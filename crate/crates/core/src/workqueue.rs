//! A message queue with visibility timeouts and at-least-once delivery.
//!
//! Receiving a message hides it until its visibility deadline and hands the
//! caller a fresh receipt handle; deleting with anything but the latest
//! handle is rejected as stale, so a consumer that lost its claim can never
//! destroy work that was handed to someone else. Messages that are received
//! but never deleted become visible again at the deadline and are
//! redelivered. Expiry is evaluated lazily against the injected clock, so
//! the same queue runs under real or simulated time.
//!
//! Delivery among visible messages is FIFO by enqueue order.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::time::{Duration, Timestamp};

#[doc(hidden)]
pub mod reference;

/// Queue carrying one work message per uploaded image, created at bootstrap.
pub const REQUESTS_QUEUE: &str = "requests";
/// Queue carrying one result notification per processed image.
pub const RESPONSES_QUEUE: &str = "responses";

/// Ceiling on `max_messages` per receive call.
pub const MAX_RECEIVE_BATCH: usize = 10;

/// Default visibility timeout: double the worker's 60 s poll cadence.
pub const DEFAULT_VISIBILITY_TIMEOUT: Duration = Duration::from_millis(120_000);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueueError {
    #[error("no such queue: {0}")]
    NoSuchQueue(String),
    #[error("message body must be non-empty")]
    EmptyBody,
    #[error("batch size {0} outside 1..={MAX_RECEIVE_BATCH}")]
    InvalidBatchSize(usize),
    #[error("receipt handle is stale; the message may have been redelivered")]
    StaleReceipt,
    #[error("queue already exists: {0}")]
    QueueExists(String),
}

/// What a receiver gets back: enough to process and then delete.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReceivedMessage {
    pub message_id: String,
    pub receipt_handle: String,
    pub body: String,
    pub receive_count: u32,
}

/// Counters exposed for metrics and conservation checks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueueStats {
    pub total_sent: u64,
    pub total_deleted: u64,
    /// Receives of a message that had already been received before.
    pub redeliveries: u64,
    pub visible: usize,
    pub in_flight: usize,
}

struct StoredMessage {
    message_id: String,
    body: String,
    #[allow(dead_code)]
    enqueued_at: Timestamp,
    receive_count: u32,
    visibility_deadline: Option<Timestamp>,
    receipt_handle: Option<String>,
    deleted: bool,
}

impl StoredMessage {
    fn visible(&self, now: Timestamp) -> bool {
        !self.deleted && self.visibility_deadline.is_none_or(|d| d <= now)
    }

    fn in_flight(&self, now: Timestamp) -> bool {
        !self.deleted && self.visibility_deadline.is_some_and(|d| d > now)
    }
}

struct QueueState {
    default_visibility_timeout: Duration,
    messages: VecDeque<StoredMessage>,
    total_sent: u64,
    total_deleted: u64,
    redeliveries: u64,
}

impl QueueState {
    // Fully consumed prefix entries can never match a receipt again.
    fn compact(&mut self) {
        while self.messages.front().is_some_and(|m| m.deleted) {
            self.messages.pop_front();
        }
    }
}

pub struct QueueService {
    clock: Arc<Clock>,
    inner: Mutex<Inner>,
}

struct Inner {
    queues: BTreeMap<String, QueueState>,
    next_message_seq: u64,
    next_receipt_seq: u64,
}

impl QueueService {
    pub fn new(clock: Arc<Clock>) -> Self {
        QueueService {
            clock,
            inner: Mutex::new(Inner {
                queues: BTreeMap::new(),
                next_message_seq: 0,
                next_receipt_seq: 0,
            }),
        }
    }

    pub fn create_queue(&self, name: &str, default_visibility: Duration) -> Result<(), QueueError> {
        let mut inner = self.inner.lock().unwrap();
        if inner.queues.contains_key(name) {
            return Err(QueueError::QueueExists(name.to_string()));
        }
        inner.queues.insert(
            name.to_string(),
            QueueState {
                default_visibility_timeout: default_visibility,
                messages: VecDeque::new(),
                total_sent: 0,
                total_deleted: 0,
                redeliveries: 0,
            },
        );
        Ok(())
    }

    pub fn default_visibility_timeout(&self, queue: &str) -> Result<Duration, QueueError> {
        let inner = self.inner.lock().unwrap();
        inner
            .queues
            .get(queue)
            .map(|q| q.default_visibility_timeout)
            .ok_or_else(|| QueueError::NoSuchQueue(queue.to_string()))
    }

    /// Enqueues `body`; the message is visible immediately.
    pub fn send(&self, queue: &str, body: &str) -> Result<String, QueueError> {
        if body.is_empty() {
            return Err(QueueError::EmptyBody);
        }
        let now = self.clock.now();
        let mut inner = self.inner.lock().unwrap();
        let seq = inner.next_message_seq;
        inner.next_message_seq += 1;
        let state = inner
            .queues
            .get_mut(queue)
            .ok_or_else(|| QueueError::NoSuchQueue(queue.to_string()))?;
        let message_id = format!("m-{seq:08}");
        state.messages.push_back(StoredMessage {
            message_id: message_id.clone(),
            body: body.to_string(),
            enqueued_at: now,
            receive_count: 0,
            visibility_deadline: None,
            receipt_handle: None,
            deleted: false,
        });
        state.total_sent += 1;
        Ok(message_id)
    }

    /// Hands out up to `max_messages` currently-visible messages in enqueue
    /// order. Each one is hidden until `now + visibility_timeout` and gets a
    /// fresh receipt handle.
    pub fn receive(
        &self,
        queue: &str,
        max_messages: usize,
        visibility_timeout: Duration,
    ) -> Result<Vec<ReceivedMessage>, QueueError> {
        if !(1..=MAX_RECEIVE_BATCH).contains(&max_messages) {
            return Err(QueueError::InvalidBatchSize(max_messages));
        }
        let now = self.clock.now();
        let mut inner = self.inner.lock().unwrap();
        let mut receipt_seq = inner.next_receipt_seq;
        let state = inner
            .queues
            .get_mut(queue)
            .ok_or_else(|| QueueError::NoSuchQueue(queue.to_string()))?;
        let mut received = Vec::new();
        for msg in state.messages.iter_mut() {
            if received.len() == max_messages {
                break;
            }
            if !msg.visible(now) {
                continue;
            }
            let handle = format!("rh-{receipt_seq:08}");
            receipt_seq += 1;
            msg.receive_count += 1;
            if msg.receive_count >= 2 {
                state.redeliveries += 1;
            }
            msg.visibility_deadline = Some(now + visibility_timeout);
            msg.receipt_handle = Some(handle.clone());
            received.push(ReceivedMessage {
                message_id: msg.message_id.clone(),
                receipt_handle: handle,
                body: msg.body.clone(),
                receive_count: msg.receive_count,
            });
        }
        inner.next_receipt_seq = receipt_seq;
        Ok(received)
    }

    /// Permanently removes the message whose *latest* receipt handle is
    /// `receipt_handle`. Any older handle (one superseded by a redelivery)
    /// is stale and removes nothing.
    pub fn delete(&self, queue: &str, receipt_handle: &str) -> Result<(), QueueError> {
        let mut inner = self.inner.lock().unwrap();
        let state = inner
            .queues
            .get_mut(queue)
            .ok_or_else(|| QueueError::NoSuchQueue(queue.to_string()))?;
        for msg in state.messages.iter_mut() {
            if !msg.deleted && msg.receipt_handle.as_deref() == Some(receipt_handle) {
                msg.deleted = true;
                state.total_deleted += 1;
                state.compact();
                return Ok(());
            }
        }
        Err(QueueError::StaleReceipt)
    }

    /// Count of currently-visible messages; in-flight messages are excluded.
    pub fn approximate_depth(&self, queue: &str) -> Result<usize, QueueError> {
        let now = self.clock.now();
        let inner = self.inner.lock().unwrap();
        let state = inner
            .queues
            .get(queue)
            .ok_or_else(|| QueueError::NoSuchQueue(queue.to_string()))?;
        Ok(state.messages.iter().filter(|m| m.visible(now)).count())
    }

    pub fn stats(&self, queue: &str) -> Result<QueueStats, QueueError> {
        let now = self.clock.now();
        let inner = self.inner.lock().unwrap();
        let state = inner
            .queues
            .get(queue)
            .ok_or_else(|| QueueError::NoSuchQueue(queue.to_string()))?;
        Ok(QueueStats {
            total_sent: state.total_sent,
            total_deleted: state.total_deleted,
            redeliveries: state.redeliveries,
            visible: state.messages.iter().filter(|m| m.visible(now)).count(),
            in_flight: state.messages.iter().filter(|m| m.in_flight(now)).count(),
        })
    }
}

/// Body of a request-queue message, one per uploaded image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestBody {
    pub bucket: String,
    pub key: String,
    pub job: String,
}

/// Body of a response-queue message, one per classification result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseBody {
    pub job: String,
    pub image: String,
    pub label: String,
}
