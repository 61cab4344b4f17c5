//! An elastic two-tier task-processing pipeline.
//!
//! The web tier ([`gateway`]) accepts batch image uploads, stores them in the
//! [`blobstore`], and fans one work message per image into the [`workqueue`].
//! A controller ([`autoscaler`]) watches queue depth and launches or retires
//! app-tier instances on the [`fabric`]; each running instance hosts a
//! [`worker`] loop that polls the queue, classifies the image bytes, and
//! publishes results back through the output bucket and response queue.
//!
//! Every component reads time through an injected [`clock::Clock`], so the
//! whole pipeline runs identically under real time (the live service) and
//! virtual time (the [`sim`] harness, which reproduces scaling and latency
//! metrics deterministically).

pub mod autoscaler;
pub mod blobstore;
pub mod classifier;
pub mod clock;
pub mod config;
pub mod fabric;
pub mod gateway;
pub mod metrics;
pub mod sim;
pub mod system;
pub mod time;
pub mod worker;
pub mod workqueue;

pub use clock::Clock;
pub use config::ServiceConfig;
pub use system::System;
pub use time::{Duration, Timestamp};
