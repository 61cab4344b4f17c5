//! Bootstrap wiring shared by the live service and the simulator.

use std::path::PathBuf;
use std::sync::Arc;

use crate::autoscaler::ScalingPolicy;
use crate::blobstore::{BlobError, BlobStore, INPUT_BUCKET, OUTPUT_BUCKET};
use crate::classifier::{Classifier, StubClassifier};
use crate::clock::Clock;
use crate::config::ServiceConfig;
use crate::gateway::Gateway;
use crate::metrics::Metrics;
use crate::worker::{WorkerConfig, WorkerDeps};
use crate::workqueue::{QueueService, REQUESTS_QUEUE, RESPONSES_QUEUE};

/// One deployment's worth of wired components: two buckets (`input`,
/// `output`), two queues (`requests`, `responses`), fabric, gateway, and
/// the metrics collector, all reading the same clock.
pub struct System {
    pub clock: Arc<Clock>,
    pub store: Arc<BlobStore>,
    pub queues: Arc<QueueService>,
    pub fabric: Arc<crate::fabric::Fabric>,
    pub gateway: Arc<Gateway>,
    pub metrics: Arc<Metrics>,
    pub classifier: Arc<dyn Classifier>,
    pub policy: ScalingPolicy,
    pub worker_config: WorkerConfig,
}

impl System {
    /// Boots a system on the given clock. `store_root` switches the blob
    /// store to directory-backed persistence.
    pub fn bootstrap(
        clock: Arc<Clock>,
        policy: ScalingPolicy,
        worker_config: WorkerConfig,
        max_batch: usize,
        seed: u64,
        store_root: Option<PathBuf>,
    ) -> Result<Self, BlobError> {
        let store = Arc::new(match store_root {
            Some(root) => BlobStore::with_root(Arc::clone(&clock), root)?,
            None => BlobStore::new(Arc::clone(&clock)),
        });
        for bucket in [INPUT_BUCKET, OUTPUT_BUCKET] {
            match store.create_bucket(bucket) {
                Ok(()) | Err(BlobError::BucketExists(_)) => {}
                Err(e) => return Err(e),
            }
        }
        let queues = Arc::new(QueueService::new(Arc::clone(&clock)));
        for queue in [REQUESTS_QUEUE, RESPONSES_QUEUE] {
            queues
                .create_queue(queue, worker_config.visibility_timeout)
                .expect("fresh queue service has no queues");
        }
        let fabric = Arc::new(crate::fabric::Fabric::new(Arc::clone(&clock)));
        let metrics = Arc::new(Metrics::new());
        let gateway = Arc::new(Gateway::new(
            Arc::clone(&store),
            Arc::clone(&queues),
            Arc::clone(&clock),
            Arc::clone(&metrics),
            max_batch,
            seed,
        ));
        Ok(System {
            clock,
            store,
            queues,
            fabric,
            gateway,
            metrics,
            classifier: Arc::new(StubClassifier::new(seed)),
            policy,
            worker_config,
        })
    }

    /// Live-mode bootstrap from a parsed config file.
    pub fn from_config(config: &ServiceConfig, store_root: Option<PathBuf>) -> Result<Self, BlobError> {
        Self::bootstrap(
            Arc::new(Clock::real()),
            config.policy(),
            config.worker_config(),
            config.max_batch,
            config.seed,
            store_root,
        )
    }

    pub fn worker_deps(&self) -> WorkerDeps {
        WorkerDeps {
            store: Arc::clone(&self.store),
            queues: Arc::clone(&self.queues),
            classifier: Arc::clone(&self.classifier),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bootstrap_creates_buckets_and_queues() {
        let sys = System::bootstrap(
            Arc::new(Clock::simulated()),
            ScalingPolicy::default(),
            WorkerConfig::default(),
            50,
            0,
            None,
        )
        .unwrap();
        assert!(sys.store.list(INPUT_BUCKET, "").unwrap().is_empty());
        assert!(sys.store.list(OUTPUT_BUCKET, "").unwrap().is_empty());
        assert_eq!(sys.queues.approximate_depth(REQUESTS_QUEUE).unwrap(), 0);
        assert_eq!(sys.queues.approximate_depth(RESPONSES_QUEUE).unwrap(), 0);
        assert_eq!(sys.fabric.count_active(), 0);
    }
}
