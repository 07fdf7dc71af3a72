//! Storage node: group-committed journal, serial force-write drain, and the
//! periodically flushed write cache.
//!
//! Entries join an open group after their processing delay. The group is
//! sealed when `group_wait` has elapsed since its first entry or when it holds
//! `group_max_entries`. Sealed groups queue for the force-write thread, which
//! runs at most one fdatasync at a time; each fdatasync covers every group
//! sealed before it started. An entry is acknowledged only when the fdatasync
//! covering it completes.

use std::collections::VecDeque;

use crate::dist::LogNormalLatency;
use crate::engine::{RngState, Scheduler, SimRng};
use crate::error::SimError;
use crate::storage::{sample_fsync, BlockLayer, DeviceModel};
use crate::time::{SimDuration, SimTime};

pub const DEFAULT_GROUP_MAX_ENTRIES: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JournalConfig {
    pub group_wait: SimDuration,
    pub group_max_entries: usize,
}

impl Default for JournalConfig {
    fn default() -> Self {
        JournalConfig { group_wait: SimDuration::from_millis(1), group_max_entries: DEFAULT_GROUP_MAX_ENTRIES }
    }
}

#[derive(Clone, Debug)]
pub struct PendingEntry<T> {
    pub token: T,
    pub enqueued_at: SimTime,
    /// Processing delay the entry paid before reaching the journal.
    pub processing: SimDuration,
}

#[derive(Clone, Debug)]
pub struct SealedGroup<T> {
    pub entries: Vec<PendingEntry<T>>,
    pub opened_at: SimTime,
    pub sealed_at: SimTime,
}

#[derive(Clone, Debug)]
struct InFlight<T> {
    id: u64,
    started_at: SimTime,
    duration: SimDuration,
    contended: bool,
    groups: Vec<SealedGroup<T>>,
}

/// An fdatasync that has just started.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FsyncStart {
    pub id: u64,
    pub started_at: SimTime,
    pub duration: SimDuration,
    pub contended: bool,
    pub groups: usize,
    pub entries: usize,
}

impl FsyncStart {
    pub fn ends_at(&self) -> SimTime {
        self.started_at + self.duration
    }
}

/// Per-entry timing of an acknowledged entry.
#[derive(Clone, Debug)]
pub struct AckedEntry<T> {
    pub token: T,
    pub enqueued_at: SimTime,
    pub processing: SimDuration,
    /// Accumulation window of the covering group (first entry to seal).
    pub group_window: SimDuration,
    /// Time from the entry joining the group until the group sealed.
    pub own_group_wait: SimDuration,
    /// Time the sealed group waited for the force-write thread.
    pub queue_wait: SimDuration,
    pub fsync_id: u64,
    pub fsync: SimDuration,
}

#[derive(Clone, Debug)]
pub struct FsyncCompletion<T> {
    pub id: u64,
    pub started_at: SimTime,
    pub finished_at: SimTime,
    pub contended: bool,
    pub entries: Vec<AckedEntry<T>>,
    /// Sealed groups left waiting when this fdatasync finished.
    pub queued_groups: usize,
}

#[derive(Debug)]
pub struct Journal<T> {
    config: JournalConfig,
    open: Vec<PendingEntry<T>>,
    open_since: SimTime,
    generation: u64,
    sealed: VecDeque<SealedGroup<T>>,
    in_flight: Option<InFlight<T>>,
    next_fsync_id: u64,
}

impl<T> Journal<T> {
    pub fn new(config: JournalConfig) -> Self {
        Journal {
            config,
            open: Vec::new(),
            open_since: SimTime::ZERO,
            generation: 0,
            sealed: VecDeque::new(),
            in_flight: None,
            next_fsync_id: 0,
        }
    }

    pub fn config(&self) -> &JournalConfig {
        &self.config
    }

    pub fn open_len(&self) -> usize {
        self.open.len()
    }

    pub fn sealed_len(&self) -> usize {
        self.sealed.len()
    }

    pub fn fsync_in_progress(&self) -> bool {
        self.in_flight.is_some()
    }

    /// Adds an entry to the open group. Returns the deadline and generation
    /// of a group timer the caller must arm, when this entry opened a group
    /// that did not seal immediately.
    pub fn enqueue(&mut self, token: T, now: SimTime, processing: SimDuration) -> Option<(SimTime, u64)> {
        let opened = self.open.is_empty();
        if opened {
            self.open_since = now;
            self.generation += 1;
        }
        self.open.push(PendingEntry { token, enqueued_at: now, processing });
        if self.config.group_wait.is_zero() || self.open.len() >= self.config.group_max_entries.max(1) {
            self.seal(now);
            return None;
        }
        opened.then_some((self.open_since + self.config.group_wait, self.generation))
    }

    /// Group timer expiry; stale generations (group already sealed by size)
    /// are ignored.
    pub fn on_group_timer(&mut self, generation: u64, now: SimTime) -> bool {
        if generation != self.generation || self.open.is_empty() {
            return false;
        }
        self.seal(now);
        true
    }

    fn seal(&mut self, now: SimTime) {
        let entries = std::mem::take(&mut self.open);
        self.sealed.push_back(SealedGroup { entries, opened_at: self.open_since, sealed_at: now });
    }

    /// Starts an fdatasync covering every sealed group, if the force-write
    /// thread is idle and there is anything to sync.
    pub fn try_start_fsync(&mut self, now: SimTime, draw: impl FnOnce() -> (SimDuration, bool)) -> Option<FsyncStart> {
        if self.in_flight.is_some() || self.sealed.is_empty() {
            return None;
        }
        let groups: Vec<SealedGroup<T>> = self.sealed.drain(..).collect();
        let (duration, contended) = draw();
        let id = self.next_fsync_id;
        self.next_fsync_id += 1;
        let entries = groups.iter().map(|g| g.entries.len()).sum();
        let start = FsyncStart { id, started_at: now, duration, contended, groups: groups.len(), entries };
        self.in_flight = Some(InFlight { id, started_at: now, duration, contended, groups });
        Some(start)
    }

    pub fn complete_fsync(&mut self, now: SimTime) -> Result<FsyncCompletion<T>, SimError> {
        let f = self.in_flight.take().ok_or_else(|| SimError::Invariant("fsync completion with none in flight".into()))?;
        // completion may be observed late if the process was paused
        if now < f.started_at + f.duration {
            return Err(SimError::Invariant(format!("fsync {} completed at {now}, before {}", f.id, f.started_at + f.duration)));
        }
        let mut entries = Vec::with_capacity(f.groups.iter().map(|g| g.entries.len()).sum());
        for g in f.groups {
            let window = g.sealed_at - g.opened_at;
            let queue_wait = f.started_at - g.sealed_at;
            for e in g.entries {
                entries.push(AckedEntry {
                    own_group_wait: g.sealed_at - e.enqueued_at,
                    token: e.token,
                    enqueued_at: e.enqueued_at,
                    processing: e.processing,
                    group_window: window,
                    queue_wait,
                    fsync_id: f.id,
                    fsync: f.duration,
                });
            }
        }
        Ok(FsyncCompletion {
            id: f.id,
            started_at: f.started_at,
            finished_at: now,
            contended: f.contended,
            entries,
            queued_groups: self.sealed.len(),
        })
    }
}

/// Entry-log write cache, flushed by the sync thread every `flush_interval`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WriteCache {
    pub flush_interval: SimDuration,
    pub cached_bytes: u64,
    pub flushes: u64,
}

impl WriteCache {
    pub fn new(flush_interval: SimDuration) -> Self {
        WriteCache { flush_interval, cached_bytes: 0, flushes: 0 }
    }

    pub fn add(&mut self, bytes: u64) {
        self.cached_bytes = self.cached_bytes.saturating_add(bytes);
    }

    /// Empties the cache, returning the flushed byte count.
    pub fn flush(&mut self) -> u64 {
        self.flushes += 1;
        std::mem::take(&mut self.cached_bytes)
    }
}

/// Sync-thread tick: flush the write cache into a writeback burst on the
/// ledger device's block layer. Returns the contention window opened.
pub fn sync_thread_tick(cache: &mut WriteCache, ledger_layer: &mut BlockLayer, now: SimTime) -> SimDuration {
    let bytes = cache.flush();
    debug_assert_eq!(cache.cached_bytes, 0);
    ledger_layer.begin_writeback_burst(now, bytes)
}

/// Bookie-side request handling and write-queue delay.
pub type BookieProcessing = LogNormalLatency;

/// One storage node: its journal, write cache and random streams.
#[derive(Debug)]
pub struct Bookie<T> {
    pub journal: Journal<T>,
    pub cache: WriteCache,
    pub processing: BookieProcessing,
    pub journal_device: DeviceModel,
    pub ledger_device: DeviceModel,
    proc_rng: SimRng,
    fsync_rng: SimRng,
}

impl<T> Bookie<T> {
    pub fn new(
        name: &str,
        journal: JournalConfig,
        flush_interval: SimDuration,
        processing: BookieProcessing,
        journal_device: DeviceModel,
        ledger_device: DeviceModel,
        rng: &RngState,
    ) -> Self {
        Bookie {
            journal: Journal::new(journal),
            cache: WriteCache::new(flush_interval),
            processing,
            journal_device,
            ledger_device,
            proc_rng: rng.stream(&format!("bookie/{name}")),
            fsync_rng: rng.stream(&format!("fsync/{name}")),
        }
    }

    /// First half of `add_entry`: the entry is accounted in the write cache
    /// and its processing delay drawn. The entry reaches the journal after
    /// that delay.
    pub fn receive(&mut self, bytes: u64) -> SimDuration {
        self.cache.add(bytes);
        self.processing.sample(&mut self.proc_rng)
    }

    /// Starts the next fdatasync if possible, drawing its length from the
    /// journal device given the layer's current contention state.
    pub fn start_fsync(&mut self, now: SimTime, layer: &BlockLayer) -> Option<FsyncStart> {
        let device = &self.journal_device;
        let rng = &mut self.fsync_rng;
        self.journal.try_start_fsync(now, || (sample_fsync(device, layer, now, rng), layer.is_contended(now)))
    }
}

/// Events of the standalone single-bookie driver.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RigEvent {
    Arrive(usize),
    Ready(usize, SimDuration),
    Timer(u64),
    Seal(u64),
    FsyncDone,
    SyncTick,
}

/// Drives one bookie in isolation: feed entry arrivals, get ack times.
///
/// The ledger device's layer receives the write-cache flushes; the journal
/// device may sit on the same layer or a separate one.
pub struct SingleBookieRig {
    pub bookie: Bookie<usize>,
    pub journal_layer: BlockLayer,
    /// `None` when the ledger shares the journal's layer.
    pub ledger_layer: Option<BlockLayer>,
    pub entry_bytes: u64,
    arrivals: Vec<SimTime>,
    pub fsyncs: Vec<FsyncStart>,
    pub completions: Vec<(u64, usize)>,
    pub max_queued_groups: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RigAck {
    pub entry: usize,
    pub arrival: SimTime,
    pub ack_at: SimTime,
    pub fsync_id: u64,
}

impl SingleBookieRig {
    pub fn new(bookie: Bookie<usize>, journal_layer: BlockLayer, ledger_layer: Option<BlockLayer>, entry_bytes: u64) -> Self {
        SingleBookieRig {
            bookie,
            journal_layer,
            ledger_layer,
            entry_bytes,
            arrivals: Vec::new(),
            fsyncs: Vec::new(),
            completions: Vec::new(),
            max_queued_groups: 0,
        }
    }

    /// Queues an entry arriving at `arrival`; returns its index.
    pub fn add_entry(&mut self, arrival: SimTime) -> usize {
        self.arrivals.push(arrival);
        self.arrivals.len() - 1
    }

    /// Runs until `horizon`, returning acknowledgements in ack order.
    pub fn run(&mut self, horizon: SimTime) -> Result<Vec<RigAck>, SimError> {
        let mut sched = Scheduler::new();
        for (i, &t) in self.arrivals.iter().enumerate() {
            sched.schedule(t, None, RigEvent::Arrive(i))?;
        }
        let flush = self.bookie.cache.flush_interval;
        if !flush.is_zero() {
            sched.schedule(SimTime::ZERO + flush, None, RigEvent::SyncTick)?;
        }
        let mut acks = Vec::new();
        while let Some(ev) = sched.pop_before(horizon) {
            let now = ev.fire_at;
            match ev.payload {
                RigEvent::Arrive(i) => {
                    let d = self.bookie.receive(self.entry_bytes);
                    sched.schedule_after(d, None, RigEvent::Ready(i, d))?;
                }
                RigEvent::Ready(i, d) => {
                    if let Some((at, gen)) = self.bookie.journal.enqueue(i, now, d) {
                        sched.schedule(at, None, RigEvent::Timer(gen))?;
                    }
                    self.kick(&mut sched, now)?;
                }
                RigEvent::Timer(gen) => {
                    sched.schedule(now, None, RigEvent::Seal(gen))?;
                }
                RigEvent::Seal(gen) => {
                    if self.bookie.journal.on_group_timer(gen, now) {
                        self.kick(&mut sched, now)?;
                    }
                }
                RigEvent::FsyncDone => {
                    let done = self.bookie.journal.complete_fsync(now)?;
                    self.max_queued_groups = self.max_queued_groups.max(done.queued_groups);
                    self.completions.push((done.id, done.queued_groups));
                    for e in done.entries {
                        acks.push(RigAck { entry: e.token, arrival: self.arrivals[e.token], ack_at: now, fsync_id: e.fsync_id });
                    }
                    self.kick(&mut sched, now)?;
                }
                RigEvent::SyncTick => {
                    let layer = self.ledger_layer.as_mut().unwrap_or(&mut self.journal_layer);
                    sync_thread_tick(&mut self.bookie.cache, layer, now);
                    sched.schedule_after(flush, None, RigEvent::SyncTick)?;
                }
            }
        }
        Ok(acks)
    }

    fn kick(&mut self, sched: &mut Scheduler<RigEvent>, now: SimTime) -> Result<(), SimError> {
        if let Some(start) = self.bookie.start_fsync(now, &self.journal_layer) {
            self.fsyncs.push(start);
            sched.schedule(start.ends_at(), None, RigEvent::FsyncDone)?;
        }
        Ok(())
    }
}
