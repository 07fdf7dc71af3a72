//! Deterministic discrete-event scheduler.
//!
//! Events are ordered by `(fire_at, seq)` where `seq` is a per-scheduler
//! insertion counter, so ties at the same instant fire in insertion order.
//! Processes registered with the scheduler can be frozen for a window of
//! virtual time; an event aimed at a frozen process is re-queued at the end of
//! the window instead of firing.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::SimError;
use crate::time::{SimDuration, SimTime};

/// Identifier of a process that can be paused (a broker or bookie JVM).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcessId(pub u32);

#[derive(Debug)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: Option<ProcessId>,
    pub payload: P,
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<P> Eq for Event<P> {}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Event<P> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

/// Half-open freeze window `[start, end)` on one process.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PauseWindow {
    pub start: SimTime,
    pub end: SimTime,
}

#[derive(Debug)]
pub struct Scheduler<P> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Event<P>>,
    pauses: Vec<Vec<PauseWindow>>,
    fired: u64,
    deferred: u64,
    fingerprint: u64,
    last_fired: Option<(SimTime, u64)>,
}

impl<P> Default for Scheduler<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Scheduler<P> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            pauses: Vec::new(),
            fired: 0,
            deferred: 0,
            fingerprint: 0xcbf2_9ce4_8422_2325,
            last_fired: None,
        }
    }

    pub fn register_process(&mut self) -> ProcessId {
        self.pauses.push(Vec::new());
        ProcessId(self.pauses.len() as u32 - 1)
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    pub fn fired(&self) -> u64 {
        self.fired
    }

    /// Number of events re-queued because their target was paused.
    pub fn deferred(&self) -> u64 {
        self.deferred
    }

    /// Rolling hash over every fired `(fire_at, seq)` pair.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn schedule(&mut self, fire_at: SimTime, target: Option<ProcessId>, payload: P) -> Result<u64, SimError> {
        if fire_at < self.now {
            return Err(SimError::ScheduleInPast { now: self.now, at: fire_at });
        }
        if let Some(p) = target {
            if p.0 as usize >= self.pauses.len() {
                return Err(SimError::UnknownProcess(p.0));
            }
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { fire_at, seq, target, payload });
        Ok(seq)
    }

    pub fn schedule_after(&mut self, delay: SimDuration, target: Option<ProcessId>, payload: P) -> Result<u64, SimError> {
        self.schedule(self.now + delay, target, payload)
    }

    /// Freezes `process` for `[now, now + length)`.
    pub fn apply_pause(&mut self, process: ProcessId, length: SimDuration) -> Result<(), SimError> {
        self.add_pause(process, self.now, length)
    }

    /// Freezes `process` for `[start, start + length)`; overlapping or
    /// touching windows are merged.
    pub fn add_pause(&mut self, process: ProcessId, start: SimTime, length: SimDuration) -> Result<(), SimError> {
        if length.is_zero() {
            return Ok(());
        }
        let windows = self.pauses.get_mut(process.0 as usize).ok_or(SimError::UnknownProcess(process.0))?;
        let mut w = PauseWindow { start, end: start + length };
        let idx = windows.partition_point(|x| x.start < w.start);
        // absorb the left neighbour if it reaches into the new window
        let mut lo = idx;
        if lo > 0 && windows[lo - 1].end >= w.start {
            lo -= 1;
            w.start = windows[lo].start;
            w.end = w.end.max(windows[lo].end);
        }
        let mut hi = idx;
        while hi < windows.len() && windows[hi].start <= w.end {
            w.end = w.end.max(windows[hi].end);
            hi += 1;
        }
        windows.splice(lo..hi, std::iter::once(w));
        Ok(())
    }

    /// End of the pause covering `t` on `process`, if any.
    pub fn paused_until(&self, process: ProcessId, t: SimTime) -> Option<SimTime> {
        let windows = self.pauses.get(process.0 as usize)?;
        let idx = windows.partition_point(|w| w.start <= t);
        if idx == 0 {
            return None;
        }
        let w = windows[idx - 1];
        (t < w.end).then_some(w.end)
    }

    pub fn pause_windows(&self, process: ProcessId) -> &[PauseWindow] {
        self.pauses.get(process.0 as usize).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Next deliverable event with `fire_at < limit`, advancing the clock.
    /// Events aimed at a paused process are moved to the end of the pause.
    pub fn pop_before(&mut self, limit: SimTime) -> Option<Event<P>> {
        loop {
            if self.heap.peek()?.fire_at >= limit {
                return None;
            }
            let mut ev = self.heap.pop()?;
            self.now = ev.fire_at;
            if let Some(p) = ev.target {
                if let Some(end) = self.paused_until(p, ev.fire_at) {
                    ev.fire_at = end;
                    ev.seq = self.next_seq;
                    self.next_seq += 1;
                    self.deferred += 1;
                    self.heap.push(ev);
                    continue;
                }
            }
            debug_assert!(self.last_fired.is_none_or(|last| last < (ev.fire_at, ev.seq)));
            self.last_fired = Some((ev.fire_at, ev.seq));
            self.fired += 1;
            self.fingerprint = mix(self.fingerprint, ev.fire_at.as_nanos(), ev.seq);
            return Some(ev);
        }
    }

    pub fn pop(&mut self) -> Option<Event<P>> {
        self.pop_before(SimTime::MAX)
    }

    /// Drops every queued event; used when a run stops at its horizon.
    pub fn drain_pending(&mut self) -> Vec<Event<P>> {
        let mut v = std::mem::take(&mut self.heap).into_vec();
        v.sort_by(|a, b| b.cmp(a));
        v
    }
}

fn mix(h: u64, a: u64, b: u64) -> u64 {
    let mut x = h ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = x.rotate_left(29).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= b.wrapping_mul(0x94d0_49bb_1331_11eb);
    x.rotate_left(31).wrapping_mul(0x0100_0000_01b3)
}

pub type SimRng = ChaCha8Rng;

/// Seed source for the independent random streams of one run.
///
/// Each stochastic model asks for its own stream by name, so adding or
/// removing a model never shifts another model's draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    seed: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, name: &str) -> SimRng {
        let mut state = self.seed ^ fnv1a64(name.as_bytes());
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
