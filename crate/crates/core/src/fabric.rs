//! The app-tier instance fabric: launch, lifecycle, terminate.
//!
//! Instances move Pending → Booting → Running → Terminating → Terminated,
//! with any non-terminal state allowed to jump to Terminating. The pending
//! delay is fixed; boot duration is sampled per instance from a seeded
//! uniform model, so runs with equal seeds boot identically. Transition
//! times are computed from the model, and `tick` merely applies whichever
//! are due, so a late tick never skews the recorded boot sample.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::{Arc, Mutex};
use thiserror::Error;

use crate::clock::Clock;
use crate::time::{Duration, Timestamp};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FabricError {
    #[error("launch count must be at least 1")]
    InvalidCount,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceState {
    Pending,
    Booting,
    Running,
    Terminating,
    Terminated,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceId(String);

impl InstanceId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Boot-latency model: a fixed pending delay, then a uniformly jittered
/// boot duration sampled from a seeded generator. Zero jitter means every
/// instance boots in exactly `boot_mean`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootModel {
    #[serde(rename = "pending_delay_ms")]
    pub pending_delay: Duration,
    #[serde(rename = "boot_mean_ms")]
    pub boot_mean: Duration,
    #[serde(rename = "boot_jitter_ms")]
    pub boot_jitter: Duration,
    pub seed: u64,
}

impl Default for BootModel {
    fn default() -> Self {
        BootModel {
            pending_delay: Duration::from_millis(30_000),
            boot_mean: Duration::from_millis(71_530),
            boot_jitter: Duration::ZERO,
            seed: 0,
        }
    }
}

impl BootModel {
    /// Sample the boot duration for the instance with global launch index
    /// `index`. Derivation is per-instance, so the value is independent of
    /// how launches were batched.
    fn sample(&self, index: u64) -> Duration {
        if self.boot_jitter.is_zero() {
            return self.boot_mean;
        }
        let lo = self.boot_mean.saturating_sub(self.boot_jitter).as_millis();
        let hi = self.boot_mean.as_millis() + self.boot_jitter.as_millis();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(index));
        Duration::from_millis(rng.gen_range(lo..=hi))
    }
}

/// Static instance metadata surfaced in the metrics report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InstanceMetadata {
    pub instance_type: &'static str,
    pub region: &'static str,
}

pub const INSTANCE_METADATA: InstanceMetadata = InstanceMetadata {
    instance_type: "t2.small",
    region: "us-east-1",
};

#[derive(Clone, Debug)]
struct Instance {
    id: InstanceId,
    state: InstanceState,
    launched_at: Timestamp,
    pending_delay: Duration,
    boot_duration: Duration,
    running_since: Option<Timestamp>,
    idle_since: Option<Timestamp>,
}

impl Instance {
    fn booting_at(&self) -> Timestamp {
        self.launched_at + self.pending_delay
    }

    fn running_at(&self) -> Timestamp {
        self.booting_at() + self.boot_duration
    }

    fn active(&self) -> bool {
        matches!(
            self.state,
            InstanceState::Pending | InstanceState::Booting | InstanceState::Running
        )
    }
}

/// Read-only view of one instance's schedule, used by the simulator to plan
/// lifecycle ticks.
#[derive(Clone, Debug)]
pub struct InstanceTimeline {
    pub id: InstanceId,
    pub booting_at: Timestamp,
    pub running_at: Timestamp,
}

pub struct Fabric {
    clock: Arc<Clock>,
    inner: Mutex<FabricInner>,
}

#[derive(Default)]
struct FabricInner {
    instances: Vec<Instance>,
    next_index: u64,
    peak_active: usize,
}

impl Fabric {
    pub fn new(clock: Arc<Clock>) -> Self {
        Fabric {
            clock,
            inner: Mutex::new(FabricInner::default()),
        }
    }

    /// Launches `count` instances in Pending state with boot durations
    /// sampled from `model`.
    pub fn launch(&self, count: usize, model: &BootModel) -> Result<Vec<InstanceId>, FabricError> {
        if count < 1 {
            return Err(FabricError::InvalidCount);
        }
        let now = self.clock.now();
        let mut inner = self.inner.lock().unwrap();
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let index = inner.next_index;
            inner.next_index += 1;
            let id = InstanceId(format!("i-{index:06}"));
            inner.instances.push(Instance {
                id: id.clone(),
                state: InstanceState::Pending,
                launched_at: now,
                pending_delay: model.pending_delay,
                boot_duration: model.sample(index),
                running_since: None,
                idle_since: None,
            });
            ids.push(id);
        }
        let active = inner.instances.iter().filter(|i| i.active()).count();
        inner.peak_active = inner.peak_active.max(active);
        Ok(ids)
    }

    /// Applies every lifecycle transition due by `now`, in instance-launch
    /// order. An instance whose pending and boot windows have both elapsed
    /// hops through Booting and Running in one call, and the recorded
    /// `running_since` is the modeled completion time, not the tick time.
    pub fn tick(&self, now: Timestamp) -> Vec<(InstanceId, InstanceState, InstanceState)> {
        let mut inner = self.inner.lock().unwrap();
        let mut transitions = Vec::new();
        for inst in inner.instances.iter_mut() {
            loop {
                let next = match inst.state {
                    InstanceState::Pending if now >= inst.booting_at() => InstanceState::Booting,
                    InstanceState::Booting if now >= inst.running_at() => {
                        inst.running_since = Some(inst.running_at());
                        InstanceState::Running
                    }
                    InstanceState::Terminating => InstanceState::Terminated,
                    _ => break,
                };
                transitions.push((inst.id.clone(), inst.state, next));
                inst.state = next;
            }
        }
        transitions
    }

    /// Moves each listed non-terminal instance to Terminating. Unknown or
    /// already-terminated ids are ignored.
    pub fn terminate(&self, ids: &[InstanceId]) {
        let mut inner = self.inner.lock().unwrap();
        for inst in inner.instances.iter_mut() {
            if ids.contains(&inst.id)
                && !matches!(
                    inst.state,
                    InstanceState::Terminating | InstanceState::Terminated
                )
            {
                inst.state = InstanceState::Terminating;
            }
        }
    }

    /// Instances in Pending, Booting, or Running. Launches in flight count,
    /// so the controller never over-provisions during the boot window.
    pub fn count_active(&self) -> usize {
        let inner = self.inner.lock().unwrap();
        inner.instances.iter().filter(|i| i.active()).count()
    }

    /// Boot time (excluding the fixed pending delay) of every instance that
    /// reached Running, in launch order.
    pub fn boot_time_samples(&self) -> Vec<Duration> {
        let inner = self.inner.lock().unwrap();
        inner
            .instances
            .iter()
            .filter_map(|i| i.running_since.map(|r| r - i.booting_at()))
            .collect()
    }

    /// Running instances currently marked idle, with when they went idle,
    /// in launch order.
    pub fn idle_candidates(&self) -> Vec<(InstanceId, Timestamp)> {
        let inner = self.inner.lock().unwrap();
        inner
            .instances
            .iter()
            .filter(|i| i.state == InstanceState::Running)
            .filter_map(|i| i.idle_since.map(|t| (i.id.clone(), t)))
            .collect()
    }

    /// Records the first moment a worker found no work; later idle polls
    /// leave the original timestamp in place.
    pub fn mark_idle(&self, id: &InstanceId, now: Timestamp) {
        let mut inner = self.inner.lock().unwrap();
        if let Some(inst) = inner.instances.iter_mut().find(|i| &i.id == id) {
            if inst.idle_since.is_none() {
                inst.idle_since = Some(now);
            }
        }
    }

    pub fn clear_idle(&self, id: &InstanceId) {
        let mut inner = self.inner.lock().unwrap();
        if let Some(inst) = inner.instances.iter_mut().find(|i| &i.id == id) {
            inst.idle_since = None;
        }
    }

    pub fn state_of(&self, id: &InstanceId) -> Option<InstanceState> {
        let inner = self.inner.lock().unwrap();
        inner.instances.iter().find(|i| &i.id == id).map(|i| i.state)
    }

    /// Total instances ever launched.
    pub fn instances_launched(&self) -> u64 {
        self.inner.lock().unwrap().next_index
    }

    pub fn peak_active(&self) -> usize {
        self.inner.lock().unwrap().peak_active
    }

    /// Timelines of instances with launch index ≥ `from_index`, in launch
    /// order. `instances_launched()` before a launch gives the right cursor.
    pub fn timelines_since(&self, from_index: u64) -> Vec<InstanceTimeline> {
        let inner = self.inner.lock().unwrap();
        inner
            .instances
            .iter()
            .skip(from_index as usize)
            .map(|i| InstanceTimeline {
                id: i.id.clone(),
                booting_at: i.booting_at(),
                running_at: i.running_at(),
            })
            .collect()
    }
}
