//! Metrics aggregation shared by the live service and the simulator.

use std::sync::Mutex;

use serde::Serialize;
use thiserror::Error;

use crate::autoscaler::ScalingDecision;
use crate::fabric::{Fabric, InstanceMetadata, INSTANCE_METADATA};
use crate::gateway::Job;
use crate::time::Duration;
use crate::workqueue::{QueueService, REQUESTS_QUEUE, RESPONSES_QUEUE};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("cannot average an empty sample set")]
    EmptySamples,
    #[error("job has not completed")]
    JobNotCompleted,
}

/// Thread-safe collector. Decisions are also emitted as JSON lines through
/// the `autoscaler` log target.
pub struct Metrics {
    inner: Mutex<MetricsInner>,
}

#[derive(Default)]
struct MetricsInner {
    response_times: Vec<Duration>,
    decisions: Vec<ScalingDecision>,
}

impl Metrics {
    pub fn new() -> Self {
        Metrics {
            inner: Mutex::new(MetricsInner::default()),
        }
    }

    pub fn record_decision(&self, decision: ScalingDecision) {
        if let Ok(line) = serde_json::to_string(&decision) {
            log::info!(target: "autoscaler", "{line}");
        }
        self.inner.lock().unwrap().decisions.push(decision);
    }

    /// Records the job's submit-to-last-result duration.
    pub fn record_response_time(&self, job: &Job) -> Result<Duration, MetricsError> {
        let completed = job.completed_at.ok_or(MetricsError::JobNotCompleted)?;
        let response_time = completed - job.submitted_at;
        self.inner.lock().unwrap().response_times.push(response_time);
        Ok(response_time)
    }

    /// Snapshot of everything measured so far. `response_time_ms` is the
    /// most recently completed job (zero if none yet).
    pub fn report(&self, fabric: &Fabric, queues: &QueueService) -> MetricsReport {
        let inner = self.inner.lock().unwrap();
        let boot_samples = fabric.boot_time_samples();
        let redelivered = [REQUESTS_QUEUE, RESPONSES_QUEUE]
            .iter()
            .filter_map(|q| queues.stats(q).ok())
            .map(|s| s.redeliveries)
            .sum();
        MetricsReport {
            response_time_ms: inner
                .response_times
                .last()
                .copied()
                .unwrap_or(Duration::ZERO)
                .as_millis(),
            mean_boot_time_ms: mean_boot_time(&boot_samples)
                .ok()
                .map(Duration::as_millis),
            boot_samples_ms: boot_samples.iter().map(|d| d.as_millis()).collect(),
            instances_launched: fabric.instances_launched(),
            peak_active: fabric.peak_active(),
            messages_redelivered: redelivered,
            instance_metadata: INSTANCE_METADATA,
            decision_log: inner.decisions.clone(),
        }
    }
}

impl Default for Metrics {
    fn default() -> Self {
        Metrics::new()
    }
}

/// Arithmetic mean rounded half-up to the millisecond.
pub fn mean_boot_time(samples: &[Duration]) -> Result<Duration, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    let sum: u128 = samples.iter().map(|d| u128::from(d.as_millis())).sum();
    let n = samples.len() as u128;
    let mean = (2 * sum + n) / (2 * n);
    Ok(Duration::from_millis(mean as u64))
}

/// Serializable snapshot served by `GET /metrics` and written by
/// `simulate`. Field order is fixed, so equal states serialize to
/// byte-identical JSON.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub response_time_ms: u64,
    pub mean_boot_time_ms: Option<u64>,
    pub boot_samples_ms: Vec<u64>,
    pub instances_launched: u64,
    pub peak_active: usize,
    pub messages_redelivered: u64,
    pub instance_metadata: InstanceMetadata,
    pub decision_log: Vec<ScalingDecision>,
}
