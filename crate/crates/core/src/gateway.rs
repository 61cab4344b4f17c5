//! The web tier: batch submission, result collection, job status.
//!
//! Submitting a job stores each image under `<job_id>/<image_name>` in the
//! input bucket and sends one request message per image. Workers publish
//! results to the output bucket and the response queue; `collect_responses`
//! drains that queue into the job table. Recording is idempotent, so the
//! collector can run lazily on status reads, periodically in the
//! background, or both.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::blobstore::{BlobError, BlobStore, INPUT_BUCKET};
use crate::clock::Clock;
use crate::metrics::Metrics;
use crate::time::{Duration, Timestamp};
use crate::worker::{input_object_key, ResultRecord};
use crate::workqueue::{
    QueueError, QueueService, RequestBody, ResponseBody, REQUESTS_QUEUE, RESPONSES_QUEUE,
};

/// Batch ceiling. Uploads of 60 images overwhelmed the original system;
/// 50 is the documented, configurable limit that replaces that failure
/// mode with explicit backpressure.
pub const DEFAULT_MAX_BATCH: usize = 50;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("batch must contain at least one image")]
    EmptyBatch,
    #[error("duplicate image name in batch: {0}")]
    DuplicateName(String),
    #[error("image names must be non-empty")]
    EmptyName,
    #[error("batch of {submitted} exceeds the limit of {max_batch}")]
    BatchTooLarge { submitted: usize, max_batch: usize },
    #[error("unknown job: {0}")]
    UnknownJob(String),
    #[error("store: {0}")]
    Store(#[from] BlobError),
    #[error("queue: {0}")]
    Queue(#[from] QueueError),
}

/// One batch upload and everything recorded about it so far.
#[derive(Clone, Debug)]
pub struct Job {
    pub job_id: String,
    pub image_names: Vec<String>,
    pub submitted_at: Timestamp,
    pub results: BTreeMap<String, String>,
    pub completed_at: Option<Timestamp>,
}

#[cfg(test)]
impl Job {
    pub(crate) fn new_for_tests(
        job_id: &str,
        image_names: Vec<String>,
        submitted_at: Timestamp,
    ) -> Self {
        Job {
            job_id: job_id.to_string(),
            image_names,
            submitted_at,
            results: BTreeMap::new(),
            completed_at: None,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum JobState {
    Pending,
    Completed,
}

/// Snapshot returned by [`Gateway::job_status`]: results in submission
/// order, response time once complete.
#[derive(Clone, Debug)]
pub struct JobStatus {
    pub state: JobState,
    pub results: Vec<ResultRecord>,
    pub response_time: Option<Duration>,
}

pub struct Gateway {
    store: Arc<BlobStore>,
    queues: Arc<QueueService>,
    clock: Arc<Clock>,
    metrics: Arc<Metrics>,
    max_batch: usize,
    inner: Mutex<GatewayInner>,
}

struct GatewayInner {
    jobs: BTreeMap<String, Job>,
    rng: ChaCha8Rng,
}

impl Gateway {
    pub fn new(
        store: Arc<BlobStore>,
        queues: Arc<QueueService>,
        clock: Arc<Clock>,
        metrics: Arc<Metrics>,
        max_batch: usize,
        seed: u64,
    ) -> Self {
        Gateway {
            store,
            queues,
            clock,
            metrics,
            max_batch,
            inner: Mutex::new(GatewayInner {
                jobs: BTreeMap::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            }),
        }
    }

    pub fn max_batch(&self) -> usize {
        self.max_batch
    }

    /// Validates the batch, stores every image, fans out one request
    /// message per image, and records the job.
    pub fn submit_job(&self, images: Vec<(String, Vec<u8>)>) -> Result<String, GatewayError> {
        if images.is_empty() {
            return Err(GatewayError::EmptyBatch);
        }
        if images.len() > self.max_batch {
            return Err(GatewayError::BatchTooLarge {
                submitted: images.len(),
                max_batch: self.max_batch,
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for (name, _) in &images {
            if name.is_empty() {
                return Err(GatewayError::EmptyName);
            }
            if !seen.insert(name.clone()) {
                return Err(GatewayError::DuplicateName(name.clone()));
            }
        }

        let job_id = {
            let mut inner = self.inner.lock().unwrap();
            let bytes: [u8; 16] = inner.rng.gen();
            uuid::Builder::from_random_bytes(bytes).into_uuid().to_string()
        };

        let image_names: Vec<String> = images.iter().map(|(name, _)| name.clone()).collect();
        for (name, bytes) in images {
            self.store
                .put(INPUT_BUCKET, &input_object_key(&job_id, &name), bytes)?;
            let body = RequestBody {
                bucket: INPUT_BUCKET.to_string(),
                key: name,
                job: job_id.clone(),
            };
            self.queues.send(
                REQUESTS_QUEUE,
                &serde_json::to_string(&body).expect("request body serializes"),
            )?;
        }

        let job = Job {
            job_id: job_id.clone(),
            image_names,
            submitted_at: self.clock.now(),
            results: BTreeMap::new(),
            completed_at: None,
        };
        self.inner.lock().unwrap().jobs.insert(job_id.clone(), job);
        Ok(job_id)
    }

    /// Drains the visible response queue into the job table and returns how
    /// many results were newly recorded. Duplicates (redelivered responses)
    /// and responses for unknown jobs are consumed without effect.
    pub fn collect_responses(&self) -> Result<usize, GatewayError> {
        let mut newly_recorded = 0;
        loop {
            let batch = self.queues.receive(
                RESPONSES_QUEUE,
                crate::workqueue::MAX_RECEIVE_BATCH,
                self.queues.default_visibility_timeout(RESPONSES_QUEUE)?,
            )?;
            if batch.is_empty() {
                return Ok(newly_recorded);
            }
            for msg in batch {
                match serde_json::from_str::<ResponseBody>(&msg.body) {
                    Ok(resp) => {
                        if self.record_result(&resp) {
                            newly_recorded += 1;
                        }
                    }
                    Err(e) => {
                        log::warn!("malformed response discarded: {e}");
                    }
                }
                match self.queues.delete(RESPONSES_QUEUE, &msg.receipt_handle) {
                    Ok(()) | Err(QueueError::StaleReceipt) => {}
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }

    /// Returns true if this was the first result for the image.
    fn record_result(&self, resp: &ResponseBody) -> bool {
        let mut inner = self.inner.lock().unwrap();
        let Some(job) = inner.jobs.get_mut(&resp.job) else {
            log::warn!("response for unknown job {} discarded", resp.job);
            return false;
        };
        if !job.image_names.iter().any(|n| n == &resp.image) {
            log::warn!(
                "response for unknown image {} in job {} discarded",
                resp.image,
                resp.job
            );
            return false;
        }
        if job.results.contains_key(&resp.image) {
            return false;
        }
        job.results.insert(resp.image.clone(), resp.label.clone());
        if job.results.len() == job.image_names.len() {
            job.completed_at = Some(self.clock.now());
            if let Err(e) = self.metrics.record_response_time(job) {
                log::warn!("response time for {}: {e}", job.job_id);
            }
        }
        true
    }

    pub fn job_status(&self, job_id: &str) -> Result<JobStatus, GatewayError> {
        let inner = self.inner.lock().unwrap();
        let job = inner
            .jobs
            .get(job_id)
            .ok_or_else(|| GatewayError::UnknownJob(job_id.to_string()))?;
        let results = job
            .image_names
            .iter()
            .filter_map(|name| {
                job.results.get(name).map(|label| ResultRecord {
                    image_name: name.clone(),
                    label: label.clone(),
                })
            })
            .collect();
        Ok(JobStatus {
            state: if job.completed_at.is_some() {
                JobState::Completed
            } else {
                JobState::Pending
            },
            results,
            response_time: job.completed_at.map(|done| done - job.submitted_at),
        })
    }

    /// Snapshot of a job's record, for metrics and tests.
    pub fn job(&self, job_id: &str) -> Result<Job, GatewayError> {
        let inner = self.inner.lock().unwrap();
        inner
            .jobs
            .get(job_id)
            .cloned()
            .ok_or_else(|| GatewayError::UnknownJob(job_id.to_string()))
    }
}
