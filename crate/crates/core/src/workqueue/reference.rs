//! A deliberately naive queue model used as the conformance oracle.
//!
//! This is test support, not production code: it re-derives visibility,
//! redelivery, and stale-receipt behavior from first principles with plain
//! vectors and explicit time, sharing nothing with [`QueueService`]'s
//! implementation. Property suites drive both with the same operation
//! sequence and require identical observable behavior.
//!
//! [`QueueService`]: super::QueueService

/// Outcome of a model receive, mirroring [`super::ReceivedMessage`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelReceived {
    pub receipt: u64,
    pub body: String,
    pub receive_count: u32,
}

#[derive(Debug, Clone)]
struct ModelMessage {
    body: String,
    receive_count: u32,
    deadline: Option<u64>,
    receipt: Option<u64>,
    deleted: bool,
}

/// Reference state machine for a single queue. Time is an explicit
/// millisecond argument; the caller drives it forward.
#[derive(Debug, Default)]
pub struct ModelQueue {
    messages: Vec<ModelMessage>,
    next_receipt: u64,
    pub total_sent: u64,
    pub total_deleted: u64,
    pub redeliveries: u64,
}

impl ModelQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(&mut self, body: &str) {
        self.messages.push(ModelMessage {
            body: body.to_string(),
            receive_count: 0,
            deadline: None,
            receipt: None,
            deleted: false,
        });
        self.total_sent += 1;
    }

    fn visible(m: &ModelMessage, now: u64) -> bool {
        !m.deleted && m.deadline.is_none_or(|d| d <= now)
    }

    pub fn receive(&mut self, now: u64, max: usize, visibility_ms: u64) -> Vec<ModelReceived> {
        let mut out = Vec::new();
        for m in self.messages.iter_mut() {
            if out.len() == max {
                break;
            }
            if !Self::visible(m, now) {
                continue;
            }
            m.receive_count += 1;
            if m.receive_count >= 2 {
                self.redeliveries += 1;
            }
            m.deadline = Some(now + visibility_ms);
            let receipt = self.next_receipt;
            self.next_receipt += 1;
            m.receipt = Some(receipt);
            out.push(ModelReceived {
                receipt,
                body: m.body.clone(),
                receive_count: m.receive_count,
            });
        }
        out
    }

    /// Returns true iff the receipt was the latest handle for a live message.
    pub fn delete(&mut self, receipt: u64) -> bool {
        for m in self.messages.iter_mut() {
            if !m.deleted && m.receipt == Some(receipt) {
                m.deleted = true;
                self.total_deleted += 1;
                return true;
            }
        }
        false
    }

    pub fn depth(&self, now: u64) -> usize {
        self.messages.iter().filter(|m| Self::visible(m, now)).count()
    }

    pub fn in_flight(&self, now: u64) -> usize {
        self.messages
            .iter()
            .filter(|m| !m.deleted && m.deadline.is_some_and(|d| d > now))
            .count()
    }

    /// Bodies that were sent but never delivered to anyone so far.
    pub fn undelivered(&self) -> Vec<&str> {
        self.messages
            .iter()
            .filter(|m| !m.deleted && m.receive_count == 0)
            .map(|m| m.body.as_str())
            .collect()
    }

    /// Live (non-deleted) message count.
    pub fn live(&self) -> usize {
        self.messages.iter().filter(|m| !m.deleted).count()
    }
}
