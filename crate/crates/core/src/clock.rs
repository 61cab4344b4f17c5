//! Real and simulated clocks behind one handle.
//!
//! Real mode reads wall time and cannot be advanced. Simulated mode moves
//! only through explicit [`Clock::advance`] calls and carries a pending-timer
//! set: timers fire in deadline order, ties broken by registration order,
//! which makes any event sequence built on top of it reproducible run to run.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Instant;

use thiserror::Error;

use crate::time::{Duration, Timestamp};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClockError {
    #[error("advance is forbidden on a real clock")]
    AdvanceOnRealClock,
    #[error("timers require a simulated clock")]
    TimerOnRealClock,
}

/// Handle returned by [`Clock::register_timer`] and reported back by
/// [`Clock::advance`] when the timer fires.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimerId(u64);

pub struct Clock {
    kind: ClockKind,
}

enum ClockKind {
    Real { epoch: Instant },
    Simulated(Mutex<SimState>),
}

#[derive(Default)]
struct SimState {
    current: Timestamp,
    next_seq: u64,
    // Keyed by (deadline, registration seq); the seq doubles as the TimerId.
    timers: BTreeMap<(Timestamp, u64), ()>,
}

impl Clock {
    /// A wall clock whose epoch is the moment of construction.
    pub fn real() -> Self {
        Clock {
            kind: ClockKind::Real {
                epoch: Instant::now(),
            },
        }
    }

    /// A simulated clock starting at t=0 with no pending timers.
    pub fn simulated() -> Self {
        Clock {
            kind: ClockKind::Simulated(Mutex::new(SimState::default())),
        }
    }

    pub fn is_simulated(&self) -> bool {
        matches!(self.kind, ClockKind::Simulated(_))
    }

    pub fn now(&self) -> Timestamp {
        match &self.kind {
            ClockKind::Real { epoch } => Timestamp::from_millis(epoch.elapsed().as_millis() as u64),
            ClockKind::Simulated(state) => state.lock().unwrap().current,
        }
    }

    /// Registers a timer. A deadline at or before the current time is legal
    /// and fires on the next `advance` call (including `advance(0)`).
    pub fn register_timer(&self, deadline: Timestamp) -> Result<TimerId, ClockError> {
        match &self.kind {
            ClockKind::Real { .. } => Err(ClockError::TimerOnRealClock),
            ClockKind::Simulated(state) => {
                let mut state = state.lock().unwrap();
                let seq = state.next_seq;
                state.next_seq += 1;
                state.timers.insert((deadline, seq), ());
                Ok(TimerId(seq))
            }
        }
    }

    /// Moves simulated time forward by `d` and returns every timer whose
    /// deadline is now due, in deadline order with ties broken by
    /// registration order.
    pub fn advance(&self, d: Duration) -> Result<Vec<TimerId>, ClockError> {
        match &self.kind {
            ClockKind::Real { .. } => Err(ClockError::AdvanceOnRealClock),
            ClockKind::Simulated(state) => {
                let mut state = state.lock().unwrap();
                state.current += d;
                let cutoff = (Timestamp::from_millis(state.current.as_millis() + 1), 0);
                let still_pending = state.timers.split_off(&cutoff);
                let fired = std::mem::replace(&mut state.timers, still_pending);
                Ok(fired.into_keys().map(|(_, seq)| TimerId(seq)).collect())
            }
        }
    }

    /// Earliest pending deadline, if any. Always `None` on a real clock.
    pub fn next_deadline(&self) -> Option<Timestamp> {
        match &self.kind {
            ClockKind::Real { .. } => None,
            ClockKind::Simulated(state) => state
                .lock()
                .unwrap()
                .timers
                .keys()
                .next()
                .map(|(deadline, _)| *deadline),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulated_clock_starts_at_zero() {
        let clock = Clock::simulated();
        assert_eq!(clock.now(), Timestamp::ZERO);
    }

    #[test]
    fn advance_moves_current() {
        let clock = Clock::simulated();
        clock.advance(Duration::from_millis(5000)).unwrap();
        assert_eq!(clock.now(), Timestamp::from_millis(5000));
    }

    #[test]
    fn real_clock_is_monotonic() {
        let clock = Clock::real();
        let r1 = clock.now();
        let r2 = clock.now();
        assert!(r2 >= r1);
    }

    #[test]
    fn advance_on_real_clock_is_rejected() {
        let clock = Clock::real();
        assert_eq!(
            clock.advance(Duration::from_millis(10)).unwrap_err(),
            ClockError::AdvanceOnRealClock
        );
        assert_eq!(
            clock.register_timer(Timestamp::ZERO).unwrap_err(),
            ClockError::TimerOnRealClock
        );
    }

    #[test]
    fn timers_fire_in_deadline_order() {
        let clock = Clock::simulated();
        let at_100 = clock
            .register_timer(Timestamp::from_millis(100))
            .unwrap();
        let at_50 = clock.register_timer(Timestamp::from_millis(50)).unwrap();
        let fired = clock.advance(Duration::from_millis(100)).unwrap();
        assert_eq!(fired, vec![at_50, at_100]);
        assert_eq!(clock.now(), Timestamp::from_millis(100));
    }

    #[test]
    fn zero_advance_with_no_timers() {
        let clock = Clock::simulated();
        assert_eq!(clock.advance(Duration::ZERO).unwrap(), vec![]);
        assert_eq!(clock.now(), Timestamp::ZERO);
    }

    #[test]
    fn simultaneous_timers_fire_in_registration_order() {
        let clock = Clock::simulated();
        let first = clock.register_timer(Timestamp::from_millis(10)).unwrap();
        let second = clock.register_timer(Timestamp::from_millis(10)).unwrap();
        let third = clock.register_timer(Timestamp::from_millis(10)).unwrap();
        let fired = clock.advance(Duration::from_millis(10)).unwrap();
        assert_eq!(fired, vec![first, second, third]);
    }

    #[test]
    fn no_timer_fires_before_its_deadline() {
        let clock = Clock::simulated();
        clock.register_timer(Timestamp::from_millis(100)).unwrap();
        assert!(clock.advance(Duration::from_millis(99)).unwrap().is_empty());
        assert_eq!(clock.advance(Duration::from_millis(1)).unwrap().len(), 1);
    }

    #[test]
    fn past_deadline_fires_on_next_advance() {
        let clock = Clock::simulated();
        clock.advance(Duration::from_millis(10)).unwrap();
        let id = clock.register_timer(Timestamp::from_millis(3)).unwrap();
        assert_eq!(clock.advance(Duration::ZERO).unwrap(), vec![id]);
    }

    #[test]
    fn firing_sequence_is_deterministic() {
        let run = || {
            let clock = Clock::simulated();
            let mut fired = Vec::new();
            for deadline in [40u64, 10, 40, 25, 10] {
                clock
                    .register_timer(Timestamp::from_millis(deadline))
                    .unwrap();
            }
            for step in [10u64, 10, 10, 10] {
                fired.extend(clock.advance(Duration::from_millis(step)).unwrap());
            }
            fired
        };
        assert_eq!(run(), run());
    }
}
