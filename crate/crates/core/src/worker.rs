//! The app-tier work loop: poll, fetch, classify, publish.
//!
//! Processing one message is a fixed sequence: get the image from the input
//! bucket, classify, put the result document to the output bucket, send the
//! response message, then delete the request by receipt. Delete comes last,
//! so a crash anywhere earlier leads to redelivery rather than loss; the put
//! is keyed and the response recording is idempotent, so a redelivered
//! message produces byte-identical results.

use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blobstore::{BlobError, BlobStore, OUTPUT_BUCKET};
use crate::classifier::{Classifier, ClassifyError};
use crate::clock::Clock;
use crate::fabric::{Fabric, InstanceId, InstanceState};
use crate::time::Duration;
use crate::workqueue::{
    QueueError, QueueService, RequestBody, ResponseBody, REQUESTS_QUEUE, RESPONSES_QUEUE,
};

/// Worker knobs. The 60 s poll default mirrors a once-a-minute cron job;
/// tests and the live service override it down to milliseconds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerConfig {
    #[serde(rename = "poll_interval_ms")]
    pub poll_interval: Duration,
    pub receive_batch: usize,
    #[serde(rename = "visibility_timeout_ms")]
    pub visibility_timeout: Duration,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        WorkerConfig {
            poll_interval: Duration::from_millis(60_000),
            receive_batch: 1,
            visibility_timeout: Duration::from_millis(120_000),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkerConfigError {
    #[error("poll_interval must be positive")]
    ZeroPollInterval,
    #[error("receive_batch {0} outside 1..=10")]
    BadReceiveBatch(usize),
}

impl WorkerConfig {
    pub fn validate(&self) -> Result<(), WorkerConfigError> {
        if self.poll_interval.is_zero() {
            return Err(WorkerConfigError::ZeroPollInterval);
        }
        if self.receive_batch < 1 || self.receive_batch > crate::workqueue::MAX_RECEIVE_BATCH {
            return Err(WorkerConfigError::BadReceiveBatch(self.receive_batch));
        }
        Ok(())
    }
}

/// One classification result. Renders as the canonical key-value line,
/// e.g. `test_0.JPEG, hair_spray`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ResultRecord {
    pub image_name: String,
    pub label: String,
}

impl fmt::Display for ResultRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}", self.image_name, self.label)
    }
}

/// Result document stored in the output bucket, exactly
/// `{"image":"<name>","label":"<label>"}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct OutputDocument {
    pub image: String,
    pub label: String,
}

/// Input objects are stored under `<job>/<image>`.
pub fn input_object_key(job: &str, image: &str) -> String {
    format!("{job}/{image}")
}

/// Result documents are stored under `<job>/<image>.json`, so collecting a
/// job is a single prefix list.
pub fn output_object_key(job: &str, image: &str) -> String {
    format!("{job}/{image}.json")
}

#[derive(Debug, Error)]
pub enum ProcessError {
    /// Body was not valid request JSON. The message is removed as a poison
    /// pill before this is returned.
    #[error("malformed request body: {0}")]
    MalformedBody(String),
    /// The image object vanished; the message is removed and the error
    /// recorded by the caller's logs.
    #[error("input image missing: {0}")]
    MissingImage(String),
    /// The stored image is unclassifiable (empty bytes); removed as poison.
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error("store: {0}")]
    Store(BlobError),
    #[error("queue: {0}")]
    Queue(#[from] QueueError),
}

/// Everything a worker needs to process messages.
pub struct WorkerDeps {
    pub store: Arc<BlobStore>,
    pub queues: Arc<QueueService>,
    pub classifier: Arc<dyn Classifier>,
}

/// Processes one received request message end to end. See the module docs
/// for the step order and crash-safety argument. A stale receipt at the
/// final delete means the work was duplicated under redelivery; the stored
/// result is identical, so it is logged and swallowed.
pub fn process_message(
    receipt_handle: &str,
    body: &str,
    deps: &WorkerDeps,
) -> Result<ResultRecord, ProcessError> {
    let request: RequestBody = match serde_json::from_str(body) {
        Ok(req) => req,
        Err(e) => {
            remove_poison(deps, receipt_handle);
            return Err(ProcessError::MalformedBody(e.to_string()));
        }
    };

    let bytes = match deps.store.get(&request.bucket, &input_object_key(&request.job, &request.key))
    {
        Ok(bytes) => bytes,
        Err(e @ (BlobError::NoSuchKey { .. } | BlobError::NoSuchBucket(_))) => {
            remove_poison(deps, receipt_handle);
            return Err(ProcessError::MissingImage(e.to_string()));
        }
        Err(e) => return Err(ProcessError::Store(e)),
    };

    let label = match deps.classifier.classify(&bytes) {
        Ok(label) => label,
        Err(e) => {
            remove_poison(deps, receipt_handle);
            return Err(e.into());
        }
    };

    let doc = OutputDocument {
        image: request.key.clone(),
        label: label.clone(),
    };
    let doc_bytes = serde_json::to_vec(&doc).expect("output document serializes");
    deps.store
        .put(
            OUTPUT_BUCKET,
            &output_object_key(&request.job, &request.key),
            doc_bytes,
        )
        .map_err(ProcessError::Store)?;

    let response = ResponseBody {
        job: request.job.clone(),
        image: request.key.clone(),
        label: label.clone(),
    };
    deps.queues.send(
        RESPONSES_QUEUE,
        &serde_json::to_string(&response).expect("response body serializes"),
    )?;

    match deps.queues.delete(REQUESTS_QUEUE, receipt_handle) {
        Ok(()) => {}
        Err(QueueError::StaleReceipt) => {
            log::warn!(
                "request for {} was redelivered while we processed it; results are identical",
                request.key
            );
        }
        Err(e) => return Err(e.into()),
    }

    Ok(ResultRecord {
        image_name: request.key,
        label,
    })
}

fn remove_poison(deps: &WorkerDeps, receipt_handle: &str) {
    if let Err(e) = deps.queues.delete(REQUESTS_QUEUE, receipt_handle) {
        log::warn!("failed to remove poison message: {e}");
    }
}

/// Blocking poll loop for one live instance. Runs until the instance leaves
/// Running or `stop` is raised. While messages keep coming the loop drains
/// them back to back; `poll_interval` is the idle re-poll cadence, and the
/// first empty poll marks the instance idle for the autoscaler.
pub fn worker_loop(
    instance: &InstanceId,
    fabric: &Fabric,
    deps: &WorkerDeps,
    config: &WorkerConfig,
    clock: &Clock,
    stop: &AtomicBool,
) {
    loop {
        if stop.load(Ordering::Relaxed)
            || fabric.state_of(instance) != Some(InstanceState::Running)
        {
            return;
        }
        let received = match deps.queues.receive(
            REQUESTS_QUEUE,
            config.receive_batch,
            config.visibility_timeout,
        ) {
            Ok(received) => received,
            Err(e) => {
                log::error!("worker {instance}: receive failed: {e}");
                return;
            }
        };
        if received.is_empty() {
            fabric.mark_idle(instance, clock.now());
            // Sleep in slices so stop requests and terminations are noticed
            // promptly even under the 60 s default interval.
            let mut remaining = config.poll_interval;
            while !remaining.is_zero() {
                if stop.load(Ordering::Relaxed)
                    || fabric.state_of(instance) != Some(InstanceState::Running)
                {
                    return;
                }
                let slice = remaining.min(Duration::from_millis(20));
                std::thread::sleep(slice.std());
                remaining = remaining.saturating_sub(slice);
            }
            continue;
        }
        fabric.clear_idle(instance);
        for msg in received {
            if let Err(e) = process_message(&msg.receipt_handle, &msg.body, deps) {
                log::warn!("worker {instance}: message {} failed: {e}", msg.message_id);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blobstore::INPUT_BUCKET;
    use crate::classifier::StubClassifier;
    use crate::fabric::BootModel;
    use crate::workqueue::DEFAULT_VISIBILITY_TIMEOUT;

    fn deps() -> (Arc<Clock>, WorkerDeps) {
        let clock = Arc::new(Clock::simulated());
        let store = Arc::new(BlobStore::new(Arc::clone(&clock)));
        store.create_bucket(INPUT_BUCKET).unwrap();
        store.create_bucket(OUTPUT_BUCKET).unwrap();
        let queues = Arc::new(QueueService::new(Arc::clone(&clock)));
        queues
            .create_queue(REQUESTS_QUEUE, DEFAULT_VISIBILITY_TIMEOUT)
            .unwrap();
        queues
            .create_queue(RESPONSES_QUEUE, DEFAULT_VISIBILITY_TIMEOUT)
            .unwrap();
        (
            clock,
            WorkerDeps {
                store,
                queues,
                classifier: Arc::new(StubClassifier::new(0)),
            },
        )
    }

    fn enqueue_image(deps: &WorkerDeps, job: &str, name: &str, bytes: &[u8]) -> String {
        deps.store
            .put(INPUT_BUCKET, &input_object_key(job, name), bytes.to_vec())
            .unwrap();
        let body = serde_json::to_string(&RequestBody {
            bucket: INPUT_BUCKET.to_string(),
            key: name.to_string(),
            job: job.to_string(),
        })
        .unwrap();
        deps.queues.send(REQUESTS_QUEUE, &body).unwrap();
        body
    }

    const VIS: Duration = Duration::from_millis(120_000);

    // End-to-end fixture run checked against each postcondition.
    #[test]
    fn process_message_happy_path() {
        let (_clock, deps) = deps();
        enqueue_image(&deps, "job-1", "test_0.JPEG", b"fixture bytes");
        let msg = &deps.queues.receive(REQUESTS_QUEUE, 1, VIS).unwrap()[0];

        let record = process_message(&msg.receipt_handle, &msg.body, &deps).unwrap();
        let expected_label = StubClassifier::new(0).classify(b"fixture bytes").unwrap();
        assert_eq!(record.image_name, "test_0.JPEG");
        assert_eq!(record.label, expected_label);

        // Output object exists and is the exact result document.
        let stored = deps
            .store
            .get(OUTPUT_BUCKET, "job-1/test_0.JPEG.json")
            .unwrap();
        assert_eq!(
            String::from_utf8(stored.to_vec()).unwrap(),
            format!(r#"{{"image":"test_0.JPEG","label":"{expected_label}"}}"#)
        );

        // Response message sent.
        let responses = deps.queues.receive(RESPONSES_QUEUE, 10, VIS).unwrap();
        assert_eq!(responses.len(), 1);
        let resp: ResponseBody = serde_json::from_str(&responses[0].body).unwrap();
        assert_eq!(resp.image, "test_0.JPEG");
        assert_eq!(resp.label, expected_label);

        // Request message deleted.
        assert_eq!(deps.queues.approximate_depth(REQUESTS_QUEUE).unwrap(), 0);
        assert_eq!(deps.queues.stats(REQUESTS_QUEUE).unwrap().total_deleted, 1);
    }

    #[test]
    fn malformed_body_is_poison_removed() {
        let (_clock, deps) = deps();
        deps.queues.send(REQUESTS_QUEUE, "not json").unwrap();
        let msg = &deps.queues.receive(REQUESTS_QUEUE, 1, VIS).unwrap()[0];
        let err = process_message(&msg.receipt_handle, &msg.body, &deps).unwrap_err();
        assert!(matches!(err, ProcessError::MalformedBody(_)));
        assert_eq!(deps.queues.stats(REQUESTS_QUEUE).unwrap().total_deleted, 1);
        assert!(deps.store.list(OUTPUT_BUCKET, "").unwrap().is_empty());
    }

    #[test]
    fn missing_image_is_poison_removed() {
        let (_clock, deps) = deps();
        let body = serde_json::to_string(&RequestBody {
            bucket: INPUT_BUCKET.to_string(),
            key: "vanished.JPEG".to_string(),
            job: "job-1".to_string(),
        })
        .unwrap();
        deps.queues.send(REQUESTS_QUEUE, &body).unwrap();
        let msg = &deps.queues.receive(REQUESTS_QUEUE, 1, VIS).unwrap()[0];
        let err = process_message(&msg.receipt_handle, &msg.body, &deps).unwrap_err();
        assert!(matches!(err, ProcessError::MissingImage(_)));
        assert_eq!(deps.queues.stats(REQUESTS_QUEUE).unwrap().total_deleted, 1);
    }

    #[test]
    fn empty_image_is_poison_removed() {
        let (_clock, deps) = deps();
        enqueue_image(&deps, "job-1", "empty.JPEG", b"");
        let msg = &deps.queues.receive(REQUESTS_QUEUE, 1, VIS).unwrap()[0];
        let err = process_message(&msg.receipt_handle, &msg.body, &deps).unwrap_err();
        assert!(matches!(err, ProcessError::Classify(ClassifyError::EmptyImage)));
        assert_eq!(deps.queues.stats(REQUESTS_QUEUE).unwrap().total_deleted, 1);
        assert!(deps.store.list(OUTPUT_BUCKET, "").unwrap().is_empty());
    }

    // Idempotence scenario oracle: simulated redelivery processes the same
    // message twice; the second pass hits a stale receipt at delete, yet the
    // stored object is byte-identical and singular.
    #[test]
    fn redelivered_message_produces_identical_results() {
        let (clock, deps) = deps();
        enqueue_image(&deps, "job-1", "test_0.JPEG", b"fixture bytes");

        let short = Duration::from_millis(100);
        let first = &deps.queues.receive(REQUESTS_QUEUE, 1, short).unwrap()[0];
        clock.advance(short).unwrap();
        let second = &deps.queues.receive(REQUESTS_QUEUE, 1, short).unwrap()[0];
        assert_eq!(second.receive_count, 2);

        // Slow consumer finishes first with its now-stale receipt.
        let r1 = process_message(&first.receipt_handle, &first.body, &deps).unwrap();
        let r2 = process_message(&second.receipt_handle, &second.body, &deps).unwrap();
        assert_eq!(r1, r2);

        // Exactly one stored result, two response messages.
        assert_eq!(
            deps.store.list(OUTPUT_BUCKET, "").unwrap(),
            vec!["job-1/test_0.JPEG.json"]
        );
        assert_eq!(deps.queues.stats(RESPONSES_QUEUE).unwrap().total_sent, 2);
        assert_eq!(deps.queues.approximate_depth(REQUESTS_QUEUE).unwrap(), 0);
    }

    fn running_instance(clock: &Clock, fabric: &Fabric) -> InstanceId {
        let model = BootModel {
            pending_delay: Duration::ZERO,
            boot_mean: Duration::ZERO,
            ..BootModel::default()
        };
        let ids = fabric.launch(1, &model).unwrap();
        fabric.tick(clock.now());
        ids.into_iter().next().unwrap()
    }

    // FIFO property of the queue carries through the loop: enqueue order in,
    // result order out.
    #[test]
    fn drains_queue_in_enqueue_order() {
        let (clock, deps) = deps();
        let fabric = Fabric::new(Arc::clone(&clock));
        let instance = running_instance(&clock, &fabric);
        for i in 0..5 {
            enqueue_image(&deps, "job-1", &format!("img_{i}.JPEG"), &[i as u8 + 1]);
        }
        // Terminate once drained so the loop exits: run it from another
        // thread and flip stop after the queue empties.
        let stop = AtomicBool::new(false);
        let config = WorkerConfig {
            poll_interval: Duration::from_millis(1),
            ..WorkerConfig::default()
        };
        std::thread::scope(|s| {
            s.spawn(|| {
                while deps.queues.approximate_depth(REQUESTS_QUEUE).unwrap() > 0 {
                    std::thread::yield_now();
                }
                stop.store(true, Ordering::Relaxed);
            });
            worker_loop(&instance, &fabric, &deps, &config, &clock, &stop);
        });
        let out = deps.store.list(OUTPUT_BUCKET, "").unwrap();
        assert_eq!(out.len(), 5);
        let responses = deps.queues.receive(RESPONSES_QUEUE, 10, VIS).unwrap();
        let images: Vec<String> = responses
            .iter()
            .map(|m| serde_json::from_str::<ResponseBody>(&m.body).unwrap().image)
            .collect();
        assert_eq!(
            images,
            (0..5).map(|i| format!("img_{i}.JPEG")).collect::<Vec<_>>()
        );
    }

    // Idle-tracking scenario: first empty poll sets idle_since, further
    // empty polls leave it unchanged.
    #[test]
    fn empty_polls_mark_idle_once() {
        let (clock, deps) = deps();
        let fabric = Fabric::new(Arc::clone(&clock));
        let instance = running_instance(&clock, &fabric);
        let stop = AtomicBool::new(false);
        let config = WorkerConfig {
            poll_interval: Duration::from_millis(1),
            ..WorkerConfig::default()
        };
        std::thread::scope(|s| {
            s.spawn(|| {
                while fabric.idle_candidates().is_empty() {
                    std::thread::yield_now();
                }
                // Give it a few more empty polls before stopping.
                std::thread::sleep(std::time::Duration::from_millis(10));
                stop.store(true, Ordering::Relaxed);
            });
            worker_loop(&instance, &fabric, &deps, &config, &clock, &stop);
        });
        let idles = fabric.idle_candidates();
        assert_eq!(idles.len(), 1);
        assert_eq!(idles[0].0, instance);
    }

    #[test]
    fn result_record_renders_comma_space() {
        let record = ResultRecord {
            image_name: "test_0.JPEG".to_string(),
            label: "hair_spray".to_string(),
        };
        assert_eq!(record.to_string(), "test_0.JPEG, hair_spray");
    }

    #[test]
    fn worker_config_validation() {
        assert!(WorkerConfig::default().validate().is_ok());
        let bad = WorkerConfig {
            poll_interval: Duration::ZERO,
            ..WorkerConfig::default()
        };
        assert_eq!(
            bad.validate().unwrap_err(),
            WorkerConfigError::ZeroPollInterval
        );
        let bad = WorkerConfig {
            receive_batch: 11,
            ..WorkerConfig::default()
        };
        assert_eq!(bad.validate().unwrap_err(), WorkerConfigError::BadReceiveBatch(11));
    }
}
