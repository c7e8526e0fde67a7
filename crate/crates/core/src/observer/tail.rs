//! Reconstructing per-record durations from tail-pointer transitions.

use std::hint;
use std::thread;

use serde::{Deserialize, Serialize};

use super::clock::CycleCounter;
use super::ObserverError;
use crate::engine::TailProbe;

/// A tail position and the counter value at which it was seen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TailSample {
    pub tail: usize,
    pub at: u64,
}

/// Result of watching one buffer.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Observation {
    pub deltas: Vec<u64>,
    /// Distinct tail changes seen.
    pub transitions: usize,
    /// Records consumed without a transition of their own (tail moved by more than one).
    pub missed: usize,
}

impl Observation {
    pub fn check(&self) -> Result<(), ObserverError> {
        if self.missed > 0 {
            Err(ObserverError::Starved { missed: self.missed })
        } else {
            Ok(())
        }
    }
}

/// Builds an observation from samples in time order. A sample whose tail
/// equals the previous one is not a transition. Timestamps must not decrease.
pub fn differentiate<I>(start_tail: usize, samples: I) -> Result<Observation, ObserverError>
where
    I: IntoIterator<Item = TailSample>,
{
    let mut obs = Observation::default();
    let mut last_tail = start_tail;
    let mut last_at: Option<u64> = None;
    for s in samples {
        if let Some(prev) = last_at {
            if s.at < prev {
                return Err(ObserverError::NonMonotonicCounter { prev, next: s.at });
            }
        }
        if s.tail == last_tail {
            continue;
        }
        let step = s.tail.wrapping_sub(last_tail);
        obs.missed += step - 1;
        obs.transitions += 1;
        if let Some(prev) = last_at {
            obs.deltas.push(s.at - prev);
        }
        last_at = Some(s.at);
        last_tail = s.tail;
    }
    Ok(obs)
}

/// Replays a log recorded at every pop. Pops sharing a timestamp are
/// indistinguishable to a poller, so only the last of each group counts.
pub fn replay(log: &[TailSample]) -> Result<Observation, ObserverError> {
    let coalesced = log
        .iter()
        .enumerate()
        .filter(|(i, s)| log.get(i + 1).is_none_or(|n| n.at != s.at))
        .map(|(_, s)| *s);
    differentiate(0, coalesced)
}

/// Convenience for scripted schedules: the `i`-th record is consumed at `times[i]`.
pub fn observe_schedule(times: &[u64]) -> Result<Observation, ObserverError> {
    replay(&times.iter().enumerate().map(|(i, &at)| TailSample { tail: i + 1, at }).collect::<Vec<_>>())
}

/// Spins on `probe`, stamping every tail change with `counter`, until `done`
/// reports true and the tail has stopped moving.
pub fn poll<C, F>(probe: &TailProbe, counter: &C, done: F) -> Result<Observation, ObserverError>
where
    C: CycleCounter + ?Sized,
    F: Fn() -> bool,
{
    let start = probe.tail();
    let mut samples = Vec::new();
    let mut last = start;
    let mut idle = 0u32;
    loop {
        let t = probe.tail();
        if t != last {
            samples.push(TailSample { tail: t, at: counter.now() });
            last = t;
            idle = 0;
            continue;
        }
        if done() && probe.tail() == last {
            break;
        }
        idle += 1;
        if idle.is_multiple_of(64) {
            thread::yield_now();
        } else {
            hint::spin_loop();
        }
    }
    differentiate(start, samples)
}
