//! Conformance of the work queue against the naive reference state machine:
//! random operation sequences must produce identical observable behavior,
//! and the conservation / at-least-once invariants must hold throughout.

use std::sync::Arc;

use proptest::prelude::*;

use elastiq_core::clock::Clock;
use elastiq_core::time::Duration;
use elastiq_core::workqueue::reference::ModelQueue;
use elastiq_core::workqueue::{QueueError, QueueService};

const QUEUE: &str = "requests";

#[derive(Debug, Clone)]
enum Op {
    Send,
    Receive { max: usize, visibility_ms: u64 },
    /// Delete using the nth receipt handed out so far (may be stale).
    Delete { nth: usize },
    /// Delete a receipt that was never issued.
    DeleteBogus,
    Advance { ms: u64 },
}

fn arb_op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => Just(Op::Send),
        3 => (1usize..=10, 1u64..=5000).prop_map(|(max, visibility_ms)| Op::Receive {
            max,
            visibility_ms
        }),
        2 => (0usize..64).prop_map(|nth| Op::Delete { nth }),
        1 => Just(Op::DeleteBogus),
        2 => (0u64..=6000).prop_map(|ms| Op::Advance { ms }),
    ]
}

/// Runs one op sequence against both machines, checking equivalence after
/// every step. Returns the number of messages sent.
fn run_sequence(ops: &[Op]) -> Result<(), TestCaseError> {
    let clock = Arc::new(Clock::simulated());
    let queues = QueueService::new(Arc::clone(&clock));
    queues.create_queue(QUEUE, Duration::from_millis(1000)).unwrap();
    let mut model = ModelQueue::new();

    let mut next_body = 0usize;
    // Receipts in issue order: (real handle, model handle).
    let mut receipts: Vec<(String, u64)> = Vec::new();

    for op in ops {
        let now = clock.now().as_millis();
        match op {
            Op::Send => {
                let body = format!("b{next_body}");
                next_body += 1;
                queues.send(QUEUE, &body).unwrap();
                model.send(&body);
            }
            Op::Receive { max, visibility_ms } => {
                let got = queues
                    .receive(QUEUE, *max, Duration::from_millis(*visibility_ms))
                    .unwrap();
                let expected = model.receive(now, *max, *visibility_ms);
                prop_assert_eq!(got.len(), expected.len());
                for (real, exp) in got.iter().zip(&expected) {
                    prop_assert_eq!(&real.body, &exp.body);
                    prop_assert_eq!(real.receive_count, exp.receive_count);
                    receipts.push((real.receipt_handle.clone(), exp.receipt));
                }
                // Visibility exclusivity: an immediate second receive never
                // hands out anything just received.
                let again = queues.receive(QUEUE, 10, Duration::from_millis(*visibility_ms)).unwrap();
                let again_expected = model.receive(now, 10, *visibility_ms);
                prop_assert_eq!(again.len(), again_expected.len());
                for (real, exp) in again.iter().zip(&again_expected) {
                    prop_assert!(got.iter().all(|g| g.message_id != real.message_id));
                    prop_assert_eq!(&real.body, &exp.body);
                    receipts.push((real.receipt_handle.clone(), exp.receipt));
                }
            }
            Op::Delete { nth } => {
                if let Some((handle, model_handle)) = receipts.get(*nth) {
                    let real = queues.delete(QUEUE, handle);
                    let expected = model.delete(*model_handle);
                    match (real, expected) {
                        (Ok(()), true) => {}
                        (Err(QueueError::StaleReceipt), false) => {}
                        (real, expected) => {
                            return Err(TestCaseError::fail(format!(
                                "delete divergence: real {real:?}, model {expected}"
                            )))
                        }
                    }
                }
            }
            Op::DeleteBogus => {
                prop_assert_eq!(
                    queues.delete(QUEUE, "rh-never-issued"),
                    Err(QueueError::StaleReceipt)
                );
            }
            Op::Advance { ms } => {
                clock.advance(Duration::from_millis(*ms)).unwrap();
            }
        }

        let now = clock.now().as_millis();
        let stats = queues.stats(QUEUE).unwrap();
        prop_assert_eq!(stats.visible, model.depth(now));
        prop_assert_eq!(stats.in_flight, model.in_flight(now));
        prop_assert_eq!(stats.total_sent, model.total_sent);
        prop_assert_eq!(stats.total_deleted, model.total_deleted);
        prop_assert_eq!(stats.redeliveries, model.redeliveries);
        // Depth conservation: visible + in-flight + deleted = sent.
        prop_assert_eq!(
            stats.visible as u64 + stats.in_flight as u64 + stats.total_deleted,
            stats.total_sent
        );
        prop_assert_eq!(
            queues.approximate_depth(QUEUE).unwrap(),
            model.depth(now)
        );
    }

    // At-least-once: drain everything that is still live; nothing may be
    // stuck, and every body must have been delivered at least once by the
    // time the queue is empty.
    let mut rounds = 0;
    while model.live() > 0 {
        rounds += 1;
        prop_assert!(rounds < 10_000, "drain did not terminate");
        clock.advance(Duration::from_millis(5001)).unwrap();
        let now = clock.now().as_millis();
        let got = queues.receive(QUEUE, 10, Duration::from_millis(1)).unwrap();
        let expected = model.receive(now, 10, 1);
        prop_assert_eq!(got.len(), expected.len());
        for (real, exp) in got.iter().zip(&expected) {
            prop_assert_eq!(&real.body, &exp.body);
            prop_assert!(real.receive_count >= 1);
            prop_assert_eq!(queues.delete(QUEUE, &real.receipt_handle), Ok(()));
            prop_assert!(model.delete(exp.receipt));
        }
    }
    prop_assert!(model.undelivered().is_empty());
    let stats = queues.stats(QUEUE).unwrap();
    prop_assert_eq!(stats.total_deleted, stats.total_sent);
    prop_assert_eq!(stats.visible, 0);
    prop_assert_eq!(stats.in_flight, 0);

    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn queue_conforms_to_reference_model(ops in prop::collection::vec(arb_op(), 0..60)) {
        run_sequence(&ops)?;
    }
}

// Worked example frozen from stepping the reference machine by hand.
#[test]
fn reference_model_worked_example() {
    let mut model = ModelQueue::new();
    model.send("m");
    let first = model.receive(0, 1, 1000);
    assert_eq!(first.len(), 1);
    assert_eq!(first[0].receive_count, 1);
    assert!(model.receive(0, 1, 1000).is_empty());
    assert_eq!(model.depth(0), 0);
    // Past the deadline the message is redelivered with a fresh handle.
    let second = model.receive(1000, 1, 1000);
    assert_eq!(second.len(), 1);
    assert_eq!(second[0].receive_count, 2);
    assert_ne!(second[0].receipt, first[0].receipt);
    // The superseded handle no longer deletes.
    assert!(!model.delete(first[0].receipt));
    assert!(model.delete(second[0].receipt));
    assert_eq!(model.live(), 0);
}
