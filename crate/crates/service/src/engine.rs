//! The live runtime: one controller thread plus one worker thread per
//! Running instance, all driving the shared core components on the real
//! clock. The controller loop does what the simulator's event queue does in
//! virtual time (tick the fabric, take a control step, collect responses)
//! once per control period.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use elastiq_core::autoscaler::control_step;
use elastiq_core::fabric::InstanceState;
use elastiq_core::time::Duration;
use elastiq_core::worker::worker_loop;
use elastiq_core::System;

pub struct Engine {
    sys: Arc<System>,
    stop: Arc<AtomicBool>,
    controller: Option<JoinHandle<()>>,
    workers: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

impl Engine {
    /// Starts the controller loop. Worker threads are spawned as instances
    /// reach Running and exit when their instance is terminated.
    pub fn start(sys: Arc<System>) -> Engine {
        let stop = Arc::new(AtomicBool::new(false));
        let workers: Arc<Mutex<Vec<JoinHandle<()>>>> = Arc::new(Mutex::new(Vec::new()));

        let controller = {
            let sys = Arc::clone(&sys);
            let stop = Arc::clone(&stop);
            let workers = Arc::clone(&workers);
            std::thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    let now = sys.clock.now();
                    for (id, _, to) in sys.fabric.tick(now) {
                        if to == InstanceState::Running {
                            let sys = Arc::clone(&sys);
                            let stop = Arc::clone(&stop);
                            workers.lock().unwrap().push(std::thread::spawn(move || {
                                let deps = sys.worker_deps();
                                worker_loop(
                                    &id,
                                    &sys.fabric,
                                    &deps,
                                    &sys.worker_config,
                                    &sys.clock,
                                    &stop,
                                );
                            }));
                        }
                    }
                    if let Err(e) =
                        control_step(&sys.queues, &sys.fabric, &sys.policy, now, &sys.metrics)
                    {
                        log::error!("control step failed: {e}");
                        return;
                    }
                    if let Err(e) = sys.gateway.collect_responses() {
                        log::error!("response collection failed: {e}");
                    }
                    workers.lock().unwrap().retain(|h| !h.is_finished());
                    // Sliced sleep so shutdown is prompt under long periods.
                    let mut remaining = sys.policy.control_period;
                    while !remaining.is_zero() && !stop.load(Ordering::Relaxed) {
                        let slice = remaining.min(Duration::from_millis(20));
                        std::thread::sleep(slice.std());
                        remaining = remaining.saturating_sub(slice);
                    }
                }
            })
        };

        Engine {
            sys,
            stop,
            controller: Some(controller),
            workers,
        }
    }

    pub fn system(&self) -> &Arc<System> {
        &self.sys
    }

    /// Stops the controller and every worker thread, blocking until they
    /// have exited.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(handle) = self.controller.take() {
            let _ = handle.join();
        }
        for handle in self.workers.lock().unwrap().drain(..) {
            let _ = handle.join();
        }
    }
}
