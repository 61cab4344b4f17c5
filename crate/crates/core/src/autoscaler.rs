//! The reconciliation controller.
//!
//! Each control step reads the request-queue depth and the active instance
//! count, computes the desired app-tier size as `min(depth, cap)`, and
//! issues the minimal action: launch the shortfall, terminate instances
//! that have been idle past the grace period, or nothing. In-flight
//! launches (Pending/Booting) count as active, so repeating a step with
//! unchanged observations is a no-op rather than a duplicate launch.

use serde::Serialize;
use thiserror::Error;

use crate::fabric::{BootModel, Fabric, InstanceId};
use crate::metrics::Metrics;
use crate::time::{Duration, Timestamp};
use crate::workqueue::{QueueError, QueueService, REQUESTS_QUEUE};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("max_app_instances must be at least 1")]
    ZeroCap,
    #[error("control_period must be positive")]
    ZeroControlPeriod,
}

/// Controller parameters. The default cap of 17 mirrors the observed
/// dashboard ceiling; at or below the cap, instances track queue depth 1:1.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct ScalingPolicy {
    pub max_app_instances: usize,
    #[serde(rename = "control_period_ms")]
    pub control_period: Duration,
    #[serde(rename = "idle_timeout_ms")]
    pub idle_timeout: Duration,
    pub boot_model: BootModel,
}

impl Default for ScalingPolicy {
    fn default() -> Self {
        ScalingPolicy {
            max_app_instances: 17,
            control_period: Duration::from_millis(5000),
            idle_timeout: Duration::from_millis(60_000),
            boot_model: BootModel::default(),
        }
    }
}

impl ScalingPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.max_app_instances < 1 {
            return Err(PolicyError::ZeroCap);
        }
        if self.control_period.is_zero() {
            return Err(PolicyError::ZeroControlPeriod);
        }
        Ok(())
    }
}

/// One action per control step.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum ScalingAction {
    Launch { n: usize },
    Terminate { ids: Vec<InstanceId> },
    Noop,
}

/// What the controller observed and decided at one step. Serializes to the
/// decision-log line format, e.g.
/// `{"t":0,"depth":20,"active":0,"action":"launch","n":17}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingDecision {
    #[serde(rename = "t")]
    pub decided_at: Timestamp,
    #[serde(rename = "depth")]
    pub observed_depth: usize,
    #[serde(rename = "active")]
    pub observed_active: usize,
    #[serde(flatten)]
    pub action: ScalingAction,
}

/// Desired app-tier size for a given queue depth: instances track messages
/// one-to-one up to the cap.
pub fn desired_app_instances(depth: usize, policy: &ScalingPolicy) -> usize {
    depth.min(policy.max_app_instances)
}

/// Computes the action that moves `active` toward `desired`. Scale-in only
/// ever selects instances idle at least `idle_timeout`, oldest-idle first;
/// a busy instance is never terminated.
pub fn reconcile(
    active: usize,
    desired: usize,
    idle_candidates: &[(InstanceId, Timestamp)],
    now: Timestamp,
    policy: &ScalingPolicy,
) -> ScalingAction {
    if desired > active {
        return ScalingAction::Launch {
            n: desired - active,
        };
    }
    if desired < active {
        let mut eligible: Vec<_> = idle_candidates
            .iter()
            .filter(|(_, idle_since)| now - *idle_since >= policy.idle_timeout)
            .cloned()
            .collect();
        eligible.sort_by_key(|(_, idle_since)| *idle_since);
        let ids: Vec<InstanceId> = eligible
            .into_iter()
            .take(active - desired)
            .map(|(id, _)| id)
            .collect();
        if !ids.is_empty() {
            return ScalingAction::Terminate { ids };
        }
    }
    ScalingAction::Noop
}

/// One full controller iteration: observe, decide, execute on the fabric,
/// and append the decision to the metrics log. A missing request queue is a
/// misconfiguration and propagates.
pub fn control_step(
    queues: &QueueService,
    fabric: &Fabric,
    policy: &ScalingPolicy,
    now: Timestamp,
    metrics: &Metrics,
) -> Result<ScalingDecision, QueueError> {
    let depth = queues.approximate_depth(REQUESTS_QUEUE)?;
    let active = fabric.count_active();
    let desired = desired_app_instances(depth, policy);
    let action = reconcile(active, desired, &fabric.idle_candidates(), now, policy);
    match &action {
        ScalingAction::Launch { n } => {
            fabric
                .launch(*n, &policy.boot_model)
                .expect("launch count is at least 1 by construction");
        }
        ScalingAction::Terminate { ids } => fabric.terminate(ids),
        ScalingAction::Noop => {}
    }
    let decision = ScalingDecision {
        decided_at: now,
        observed_depth: depth,
        observed_active: active,
        action,
    };
    metrics.record_decision(decision.clone());
    Ok(decision)
}
