//! In-process service harness for integration tests: real engine, real HTTP
//! listener on an ephemeral port.

// Each test binary compiles this module separately and uses a subset of it.
#![allow(dead_code)]

use std::sync::Arc;

use elastiq::Engine;
use elastiq_core::{ServiceConfig, System};

pub struct LiveService {
    pub sys: Arc<System>,
    pub base_url: String,
    engine: Option<Engine>,
}

impl LiveService {
    /// Boots a system from `config` on the real clock and serves it.
    pub fn start(config: &ServiceConfig) -> LiveService {
        let sys = Arc::new(System::from_config(config, None).expect("bootstrap"));
        let listener = std::net::TcpListener::bind("127.0.0.1:0").expect("bind");
        let base_url = format!("http://{}", listener.local_addr().unwrap());
        let engine = Engine::start(Arc::clone(&sys));
        let http_sys = Arc::clone(&sys);
        std::thread::spawn(move || {
            let _ = elastiq::http::serve_blocking(http_sys, listener);
        });
        LiveService {
            sys,
            base_url,
            engine: Some(engine),
        }
    }

    /// Config used by the end-to-end criteria: instant boots, 10 ms polls,
    /// fast control loop, short idle grace.
    pub fn fast_config() -> ServiceConfig {
        ServiceConfig {
            pending_delay_ms: 0,
            boot_mean_ms: 0,
            boot_jitter_ms: 0,
            poll_interval_ms: 10,
            control_period_ms: 50,
            idle_timeout_ms: 100,
            seed: 0,
            ..ServiceConfig::default()
        }
    }
}

impl Drop for LiveService {
    fn drop(&mut self) {
        if let Some(engine) = self.engine.take() {
            engine.shutdown();
        }
    }
}

/// The fixture images shipped under `tests/fixtures`, with the label each
/// one must classify to under seed 0. The labels were computed by an
/// independent reference hash before the classifier was implemented.
pub const FIXTURE_LABELS: [(&str, &str); 20] = [
    ("test_0.JPEG", "hair_spray"),
    ("test_1.JPEG", "label_460"),
    ("test_2.JPEG", "label_429"),
    ("test_3.JPEG", "label_135"),
    ("test_4.JPEG", "label_493"),
    ("test_5.JPEG", "label_345"),
    ("test_6.JPEG", "label_413"),
    ("test_7.JPEG", "label_632"),
    ("test_8.JPEG", "label_619"),
    ("test_9.JPEG", "label_562"),
    ("test_10.JPEG", "label_365"),
    ("test_11.JPEG", "label_748"),
    ("test_12.JPEG", "label_075"),
    ("test_13.JPEG", "label_197"),
    ("test_14.JPEG", "label_940"),
    ("test_15.JPEG", "label_927"),
    ("test_16.JPEG", "label_507"),
    ("test_17.JPEG", "label_786"),
    ("test_18.JPEG", "label_429"),
    ("test_19.JPEG", "label_348"),
];

pub fn fixture_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn fixture_bytes(name: &str) -> Vec<u8> {
    std::fs::read(fixture_path(name)).expect("fixture exists")
}
