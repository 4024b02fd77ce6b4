//! Discrete-event core: clock, event queue, seeded randomness and the
//! bottleneck link model.

mod link;
mod log;
mod rng;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub use link::{advance, FlowCompletion, Flow, FlowId, LinkMode, LinkModel};
pub use log::{EventDetail, EventKind, EventLog, SimEvent};
pub use rng::{client_seed, seeded_rng, SimRng};

/// Dense client handle. Human-readable names live in [`EventLog::client_names`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClientId(pub u32);

impl ClientId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Monotone simulated time in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimClock {
    now_s: f64,
}

impl SimClock {
    pub fn now(&self) -> f64 {
        self.now_s
    }

    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        if t < self.now_s {
            return Err(SimError::Internal(format!(
                "clock moved backwards from {} to {t}",
                self.now_s
            )));
        }
        self.now_s = t;
        Ok(())
    }
}

struct Entry<T> {
    time: f64,
    seq: u64,
    item: T,
}

impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T> Eq for Entry<T> {}

impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Entry<T> {
    // Reversed so the BinaryHeap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Priority queue of timed items, dequeued in (time, insertion order).
pub struct EventQueue<T> {
    heap: BinaryHeap<Entry<T>>,
    clock: SimClock,
    next_seq: u64,
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        Self { heap: BinaryHeap::new(), clock: SimClock::default(), next_seq: 0 }
    }
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.clock.now()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, time: f64, item: T) -> Result<()> {
        if time.is_nan() || time < self.clock.now() {
            return Err(SimError::Internal(format!(
                "event scheduled in the past: t={time} < now={}",
                self.clock.now()
            )));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { time, seq, item });
        Ok(())
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.time)
    }

    /// Pops the earliest item and moves the clock to its time. `None` means
    /// the simulation is complete.
    pub fn next_event(&mut self) -> Option<(f64, T)> {
        let e = self.heap.pop()?;
        self.clock.advance_to(e.time).expect("queue entries are never in the past");
        Some((e.time, e.item))
    }

    /// Moves the clock forward without dequeuing (used when the link model
    /// produces a completion before the next queued item).
    pub fn advance_clock(&mut self, t: f64) -> Result<()> {
        if let Some(next) = self.peek_time() {
            if t > next {
                return Err(SimError::Internal(format!(
                    "clock advance to {t} skips queued event at {next}"
                )));
            }
        }
        self.clock.advance_to(t)
    }
}
