//! One simulation run: the component models wired onto a single scheduler.
//!
//! Publish path of a message, as events:
//!
//! 1. `Produce`: the producer emits at its fixed schedule.
//! 2. `BrokerRecv` → `BrokerSend`: broker processing, FIFO per partition.
//! 3. NIC: `qw` copies serialized on the broker's link, round-robin over the
//!    partition's ensemble; each arrives at its bookie half an RTT later.
//! 4. `BookieRecv` → `EntryReady`: bookie processing, then the entry joins
//!    the journal's open group.
//! 5. `FsyncDone`: the covering fdatasync completes and the bookie acks.
//! 6. `BrokerAck`: the `qa`-th ack completes the publish.
//! 7. Release in entry order per partition, then `Deliver` after the
//!    dispatch draw, never before an earlier message of the same key.

use std::collections::{HashMap, VecDeque};
use std::io::Write;

use crate::bookie::{sync_thread_tick, Bookie};
use crate::broker::NicLink;
use crate::engine::{ProcessId, RngState, Scheduler, SimRng};
use crate::error::SimError;
use crate::jvm::pause_schedule;
use crate::metrics::{
    decompose, BrokerStats, ComponentSamples, ContentionRecord, Counters, GcPauseRecord, LatencyHistogram, LayerStats,
    RateSeries, SimReport, CPU_BURST_PCT, CPU_IDLE_PCT,
};
use crate::routing::{stable_hash, stable_hash_16, KeySharedState};
use crate::scenario::{Arrival, Scenario};
use crate::storage::{BlockLayer, BlockLayerConfig, DeviceId, DeviceModel, LayerId};
use crate::time::{SimDuration, SimTime, NANOS_PER_SEC};
use crate::trace::TraceWriter;

use rand::Rng;

#[derive(Clone, Copy, Debug)]
enum Ev {
    Produce(u32),
    BrokerRecv(u64),
    BrokerSend(u64),
    BookieRecv { msg: u64, bookie: u32 },
    EntryReady { msg: u64, bookie: u32, processing: SimDuration },
    GroupTimer { bookie: u32, gen: u64 },
    GroupSeal { bookie: u32, gen: u64 },
    FsyncDone(u32),
    BrokerAck { msg: u64, bookie: u32 },
    Deliver(u64),
    SyncTick(u32),
    BackgroundTick(u32),
    GcPause { process: u32, length: SimDuration },
}

#[derive(Clone, Copy, Debug)]
struct MsgRt {
    publish_at: SimTime,
    producer: u32,
    key: u32,
    key_seq: u64,
    partition: u32,
    sent_at: SimTime,
    acks: u8,
    acked: bool,
    /// Delivered, or released with no subscription to deliver to.
    done: bool,
}

/// Live messages, indexed by id; retired from the front once done.
#[derive(Default)]
struct MsgTable {
    base: u64,
    slots: VecDeque<MsgRt>,
}

impl MsgTable {
    fn push(&mut self, m: MsgRt) -> u64 {
        self.slots.push_back(m);
        self.base + self.slots.len() as u64 - 1
    }

    fn get(&mut self, id: u64) -> Result<&mut MsgRt, SimError> {
        id.checked_sub(self.base)
            .and_then(|i| self.slots.get_mut(i as usize))
            .ok_or_else(|| SimError::Invariant(format!("message {id} is not live")))
    }

    /// Drops finished messages whose every copy has been acknowledged, so a
    /// late ack past the quorum still finds its message.
    fn compact(&mut self, copies: u8) {
        while self.slots.front().is_some_and(|m| m.done && m.acks >= copies) {
            self.slots.pop_front();
            self.base += 1;
        }
    }
}

struct KeyRt {
    hash16: u16,
    partition: u32,
    next_seq: u64,
    last_deliver: SimTime,
}

struct ProducerRt {
    keys: Vec<u32>,
    next_n: u64,
    key_rng: SimRng,
    jitter_rng: SimRng,
}

struct PartitionRt {
    broker: u32,
    ensemble: Vec<u32>,
    next_entry: u64,
    pending: VecDeque<u64>,
    last_sent: SimTime,
}

struct BrokerRt {
    name: String,
    pid: ProcessId,
    nic: NicLink,
    rng: SimRng,
    publish: LatencyHistogram,
    rates: RateSeries,
}

struct BookieRt {
    name: String,
    pid: ProcessId,
    bookie: Bookie<u64>,
    journal_layer: usize,
    ledger_layer: usize,
}

struct World<'s, 't> {
    sc: &'s Scenario,
    sched: Scheduler<Ev>,
    trace: TraceWriter<'t>,
    horizon: SimTime,
    producers: Vec<ProducerRt>,
    keys: Vec<KeyRt>,
    partitions: Vec<PartitionRt>,
    brokers: Vec<BrokerRt>,
    bookies: Vec<BookieRt>,
    layers: Vec<BlockLayer>,
    layer_names: Vec<String>,
    msgs: MsgTable,
    subscription: KeySharedState,
    dispatch_rng: SimRng,
    publish: LatencyHistogram,
    e2e: LatencyHistogram,
    samples: ComponentSamples,
    counters: Counters,
    gc_pauses: Vec<GcPauseRecord>,
    process_names: Vec<String>,
    fsyncs: u64,
    contended_fsyncs: u64,
    max_journal_queue: usize,
}

/// Runs `scenario` to its horizon.
pub fn run(scenario: &Scenario) -> Result<SimReport, SimError> {
    run_traced(scenario, None)
}

/// Runs `scenario`, writing the event log to `trace` when given.
pub fn run_traced(scenario: &Scenario, trace: Option<&mut dyn Write>) -> Result<SimReport, SimError> {
    if let Some((_, msg)) = scenario.validate().into_iter().next() {
        return Err(SimError::Invariant(format!("scenario is not valid: {msg}")));
    }
    let trace = match trace {
        Some(w) => TraceWriter::new(w),
        None => TraceWriter::disabled(),
    };
    let mut w = World::build(scenario, trace)?;
    w.run()?;
    w.finish()
}

fn arrival_time(n: u64, rate: u64) -> SimTime {
    SimTime::from_nanos((n as u128 * NANOS_PER_SEC as u128 / rate as u128) as u64)
}

impl<'s, 't> World<'s, 't> {
    fn build(sc: &'s Scenario, trace: TraceWriter<'t>) -> Result<Self, SimError> {
        let rng = RngState::new(sc.seed);
        let horizon = SimTime::ZERO + sc.duration;
        let seconds = sc.duration.as_nanos().div_ceil(NANOS_PER_SEC) as usize;
        let mut sched = Scheduler::new();
        let bad = |m: String| SimError::Invariant(m);

        let layer_names: Vec<String> = sc.layers.iter().map(|l| l.name.clone()).collect();
        let layers: Vec<BlockLayer> = sc
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                BlockLayer::new(BlockLayerConfig {
                    id: LayerId(i as u32),
                    total_ram: l.total_ram,
                    drain_rate: l.drain_rate,
                    degraded_lo: l.degraded_lo,
                    degraded_hi: l.degraded_hi,
                    tunables: l.tunables,
                    background_write_rate: l.background_write_rate,
                })
            })
            .collect();
        let layer_of = |name: &str| layer_names.iter().position(|n| n == name);
        let device = |name: &str| -> Result<(DeviceModel, usize), SimError> {
            let (i, d) = sc.devices.iter().enumerate().find(|(_, d)| d.name == name).ok_or_else(|| bad(format!("unknown device {name}")))?;
            let li = layer_of(&d.layer).ok_or_else(|| bad(format!("unknown layer {}", d.layer)))?;
            Ok((
                DeviceModel { id: DeviceId(i as u32), tier: d.tier, fsync_p50: d.fsync_p50, fsync_sigma: d.fsync_sigma, layer: LayerId(li as u32) },
                li,
            ))
        };

        let mut process_names = Vec::new();
        let mut brokers = Vec::new();
        for b in &sc.brokers {
            let nic = sc.nics.iter().find(|n| n.name == b.nic).ok_or_else(|| bad(format!("unknown nic {}", b.nic)))?;
            brokers.push(BrokerRt {
                name: b.name.clone(),
                pid: sched.register_process(),
                nic: NicLink::new(nic.model),
                rng: rng.stream(&format!("broker/{}", b.name)),
                publish: LatencyHistogram::new(),
                rates: RateSeries::with_seconds(seconds),
            });
            process_names.push(b.name.clone());
        }
        let mut bookies = Vec::new();
        for b in &sc.bookies {
            let (jdev, jl) = device(&b.journal)?;
            let (ldev, ll) = device(&b.ledger)?;
            bookies.push(BookieRt {
                name: b.name.clone(),
                pid: sched.register_process(),
                bookie: Bookie::new(&b.name, sc.journal, sc.flush_interval, sc.processing.bookie, jdev, ldev, &rng),
                journal_layer: jl,
                ledger_layer: ll,
            });
            process_names.push(b.name.clone());
        }

        let fmap = sc.federation_map().map_err(bad)?;
        let mut partitions = Vec::with_capacity(fmap.total_partitions() as usize);
        let hosted = if sc.producers.is_empty() { 0 } else { fmap.total_partitions() };
        for p in 0..hosted {
            let cluster = fmap.cluster_of(p);
            let cb: Vec<u32> = (0..sc.brokers.len() as u32).filter(|&i| sc.brokers[i as usize].cluster == cluster).collect();
            let ck: Vec<u32> = (0..sc.bookies.len() as u32).filter(|&i| sc.bookies[i as usize].cluster == cluster).collect();
            if cb.is_empty() || (ck.len() as u32) < sc.ensemble.e {
                return Err(bad(format!("cluster {cluster} cannot host partition {p}")));
            }
            let ensemble = (0..sc.ensemble.e).map(|i| ck[((p + i) as usize) % ck.len()]).collect();
            partitions.push(PartitionRt {
                broker: cb[p as usize % cb.len()],
                ensemble,
                next_entry: 0,
                pending: VecDeque::new(),
                last_sent: SimTime::ZERO,
            });
        }

        let mut key_index: HashMap<String, u32> = HashMap::new();
        let mut keys = Vec::new();
        let mut producers = Vec::new();
        for p in &sc.producers {
            let mut ids = Vec::with_capacity(p.keys as usize);
            for i in 0..p.keys {
                let k = format!("{}{}", p.key_prefix, i);
                let id = *key_index.entry(k.clone()).or_insert_with(|| {
                    let (_, partition) = fmap.route(k.as_bytes());
                    debug_assert_eq!(stable_hash_16(k.as_bytes()) as u32, stable_hash(k.as_bytes()) % 65536);
                    keys.push(KeyRt { hash16: stable_hash_16(k.as_bytes()), partition, next_seq: 0, last_deliver: SimTime::ZERO });
                    keys.len() as u32 - 1
                });
                ids.push(id);
            }
            producers.push(ProducerRt {
                keys: ids,
                next_n: 0,
                key_rng: rng.stream(&format!("keys/{}", p.name)),
                jitter_rng: rng.stream(&format!("arrival/{}", p.name)),
            });
        }

        let mut subscription = KeySharedState::new();
        for c in 0..sc.topic.consumers {
            subscription.join(c)?;
        }

        let mut w = World {
            sc,
            sched,
            trace,
            horizon,
            producers,
            keys,
            partitions,
            brokers,
            bookies,
            layers,
            layer_names,
            msgs: MsgTable::default(),
            subscription,
            dispatch_rng: rng.stream("dispatch"),
            publish: LatencyHistogram::new(),
            e2e: LatencyHistogram::new(),
            samples: ComponentSamples::default(),
            counters: Counters::default(),
            gc_pauses: Vec::new(),
            process_names,
            fsyncs: 0,
            contended_fsyncs: 0,
            max_journal_queue: 0,
        };
        w.write_header();
        w.seed_events(&rng)?;
        Ok(w)
    }

    fn write_header(&mut self) {
        let e = self.sc.ensemble;
        self.trace.record(SimTime::ZERO, "config", &[&e.e, &e.qw, &e.qa]);
        for b in &self.brokers {
            self.trace.record(SimTime::ZERO, "nic", &[&b.name, &b.nic.model.bandwidth]);
        }
        for (l, name) in self.layers.iter().zip(&self.layer_names) {
            self.trace.record(SimTime::ZERO, "layer", &[name, &l.config.degraded_lo.as_nanos(), &l.config.degraded_hi.as_nanos()]);
        }
        for b in &self.bookies {
            self.trace.record(SimTime::ZERO, "bookie", &[&b.name, &self.layer_names[b.journal_layer], &self.layer_names[b.ledger_layer]]);
        }
    }

    fn seed_events(&mut self, rng: &RngState) -> Result<(), SimError> {
        for (i, p) in self.sc.producers.iter().enumerate() {
            let t = arrival_time(0, p.rate);
            if t < self.horizon {
                let t = self.jittered(i, t);
                self.sched.schedule(t, None, Ev::Produce(i as u32))?;
            }
        }
        if !self.sc.flush_interval.is_zero() {
            for (i, b) in self.bookies.iter().enumerate() {
                self.sched.schedule(SimTime::ZERO + self.sc.flush_interval, Some(b.pid), Ev::SyncTick(i as u32))?;
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.config.background_write_rate > 0 {
                self.sched.schedule(SimTime::ZERO + l.config.tunables.writeback_period(), None, Ev::BackgroundTick(i as u32))?;
            }
        }
        let procs: Vec<(ProcessId, String)> = self
            .sc
            .brokers
            .iter()
            .map(|b| b.gc.clone())
            .chain(self.sc.bookies.iter().map(|b| b.gc.clone()))
            .enumerate()
            .map(|(i, gc)| (ProcessId(i as u32), gc))
            .collect();
        for (pid, gc) in procs {
            let model = self.sc.gc_model(&gc).ok_or_else(|| SimError::Invariant(format!("unknown gc {gc}")))?;
            let mut r = rng.stream(&format!("gc/{}", self.process_names[pid.0 as usize]));
            for (start, length) in pause_schedule(&model, self.horizon, &mut r) {
                self.sched.add_pause(pid, start, length)?;
                self.sched.schedule(start, None, Ev::GcPause { process: pid.0, length })?;
            }
        }
        Ok(())
    }

    fn jittered(&mut self, producer: usize, base: SimTime) -> SimTime {
        let p = &self.sc.producers[producer];
        if p.arrival != Arrival::Jitter || p.jitter == 0.0 {
            return base;
        }
        let gap = NANOS_PER_SEC as f64 / p.rate as f64;
        let off = self.producers[producer].jitter_rng.random::<f64>() * p.jitter * gap;
        base + SimDuration::from_nanos_f64(off)
    }

    fn run(&mut self) -> Result<(), SimError> {
        while let Some(ev) = self.sched.pop_before(self.horizon) {
            let now = ev.fire_at;
            match ev.payload {
                Ev::Produce(p) => self.on_produce(p as usize, now)?,
                Ev::BrokerRecv(m) => self.on_broker_recv(m, now)?,
                Ev::BrokerSend(m) => self.on_broker_send(m, now)?,
                Ev::BookieRecv { msg, bookie } => self.on_bookie_recv(msg, bookie, now)?,
                Ev::EntryReady { msg, bookie, processing } => self.on_entry_ready(msg, bookie, processing, now)?,
                Ev::GroupTimer { bookie, gen } => {
                    let pid = self.bookies[bookie as usize].pid;
                    self.sched.schedule(now, Some(pid), Ev::GroupSeal { bookie, gen })?;
                }
                Ev::GroupSeal { bookie, gen } => {
                    if self.bookies[bookie as usize].bookie.journal.on_group_timer(gen, now) {
                        self.kick(bookie, now)?;
                    }
                }
                Ev::FsyncDone(b) => self.on_fsync_done(b, now)?,
                Ev::BrokerAck { msg, bookie } => self.on_broker_ack(msg, bookie, now)?,
                Ev::Deliver(m) => self.on_deliver(m, now)?,
                Ev::SyncTick(b) => self.on_sync_tick(b, now)?,
                Ev::BackgroundTick(l) => {
                    let layer = &mut self.layers[l as usize];
                    let period = layer.config.tunables.writeback_period();
                    layer.background_tick(period);
                    self.sched.schedule_after(period, None, Ev::BackgroundTick(l))?;
                }
                Ev::GcPause { process, length } => {
                    let name = self.process_names[process as usize].clone();
                    self.trace.record(now, "gc_pause", &[&name, &length.as_nanos()]);
                    self.gc_pauses.push(GcPauseRecord { process: name, start: now, length });
                }
            }
        }
        Ok(())
    }

    fn on_produce(&mut self, p: usize, now: SimTime) -> Result<(), SimError> {
        let spec = &self.sc.producers[p];
        let rt = &mut self.producers[p];
        let key = rt.keys[rt.key_rng.random_range(0..rt.keys.len())];
        let n = rt.next_n;
        rt.next_n += 1;
        let k = &mut self.keys[key as usize];
        let key_seq = k.next_seq;
        k.next_seq += 1;
        let partition = k.partition;
        let broker = self.partitions[partition as usize].broker;
        let id = self.msgs.push(MsgRt {
            publish_at: now,
            producer: p as u32,
            key,
            key_seq,
            partition,
            sent_at: now,
            acks: 0,
            acked: false,
            done: false,
        });
        self.counters.published += 1;
        let b = &mut self.brokers[broker as usize];
        b.rates.published(now.as_nanos());
        self.trace.record(now, "publish", &[&id, &spec.name, &key, &key_seq, &partition, &b.name]);
        self.sched.schedule(now, Some(b.pid), Ev::BrokerRecv(id))?;

        let next = arrival_time(n + 1, spec.rate);
        if next < self.horizon {
            let t = self.jittered(p, next).max(now);
            self.sched.schedule(t, None, Ev::Produce(p as u32))?;
        }
        Ok(())
    }

    fn on_broker_recv(&mut self, id: u64, now: SimTime) -> Result<(), SimError> {
        let partition = self.msgs.get(id)?.partition as usize;
        let part = &mut self.partitions[partition];
        let b = &mut self.brokers[part.broker as usize];
        let d = self.sc.processing.broker.sample(&mut b.rng);
        let sent = (now + d).max(part.last_sent);
        part.last_sent = sent;
        self.sched.schedule(sent, Some(b.pid), Ev::BrokerSend(id))?;
        Ok(())
    }

    fn on_broker_send(&mut self, id: u64, now: SimTime) -> Result<(), SimError> {
        let m = self.msgs.get(id)?;
        m.sent_at = now;
        let m = *m;
        let size = self.sc.producers[m.producer as usize].message_size;
        let part = &mut self.partitions[m.partition as usize];
        let entry = part.next_entry;
        part.next_entry += 1;
        part.pending.push_back(id);
        let b = &mut self.brokers[part.broker as usize];
        self.trace.record(now, "send", &[&id, &b.name]);
        let one_way = b.nic.model.one_way();
        let rtt = b.nic.model.base_rtt;
        for pos in self.sc.ensemble.write_set(entry) {
            let bookie = part.ensemble[pos as usize];
            let tx = b.nic.transmit(now, size);
            b.rates.transmitted(tx.start.as_nanos(), tx.depart.as_nanos(), tx.bits);
            self.trace.record(now, "nic_tx", &[&b.name, &id, &tx.bits, &tx.start.as_nanos(), &tx.depart.as_nanos()]);
            self.samples.broker_network.record((tx.depart - m.publish_at) + rtt);
            let pid = self.bookies[bookie as usize].pid;
            self.sched.schedule(tx.depart + one_way, Some(pid), Ev::BookieRecv { msg: id, bookie })?;
        }
        Ok(())
    }

    fn on_bookie_recv(&mut self, id: u64, bookie: u32, now: SimTime) -> Result<(), SimError> {
        let m = *self.msgs.get(id)?;
        let size = self.sc.producers[m.producer as usize].message_size;
        let bk = &mut self.bookies[bookie as usize];
        let d = bk.bookie.receive(size);
        self.sched.schedule(now + d, Some(bk.pid), Ev::EntryReady { msg: id, bookie, processing: d })?;
        Ok(())
    }

    fn on_entry_ready(&mut self, id: u64, bookie: u32, processing: SimDuration, now: SimTime) -> Result<(), SimError> {
        let bk = &mut self.bookies[bookie as usize];
        self.trace.record(now, "enqueue", &[&bk.name, &id]);
        if let Some((at, gen)) = bk.bookie.journal.enqueue(id, now, processing) {
            self.sched.schedule(at, Some(bk.pid), Ev::GroupTimer { bookie, gen })?;
        }
        self.kick(bookie, now)
    }

    fn kick(&mut self, bookie: u32, now: SimTime) -> Result<(), SimError> {
        let bk = &mut self.bookies[bookie as usize];
        if let Some(f) = bk.bookie.start_fsync(now, &self.layers[bk.journal_layer]) {
            self.fsyncs += 1;
            self.contended_fsyncs += f.contended as u64;
            self.trace.record(now, "fsync_start", &[&bk.name, &f.id, &f.duration.as_nanos(), &(f.contended as u8)]);
            self.sched.schedule(f.ends_at(), Some(bk.pid), Ev::FsyncDone(bookie))?;
        }
        Ok(())
    }

    fn on_fsync_done(&mut self, bookie: u32, now: SimTime) -> Result<(), SimError> {
        let bk = &mut self.bookies[bookie as usize];
        let done = bk.bookie.journal.complete_fsync(now)?;
        self.max_journal_queue = self.max_journal_queue.max(done.queued_groups);
        self.trace.record(now, "fsync_end", &[&bk.name, &done.id]);
        let name = bk.name.clone();
        for e in &done.entries {
            self.samples.journal_fsync.record(e.fsync);
            self.samples.group_wait.record(e.group_window);
            self.samples.bk_processing.record(e.processing + e.queue_wait);
            self.trace.record(now, "bookie_ack", &[&name, &e.token, &done.id]);
            let partition = self.msgs.get(e.token)?.partition as usize;
            let b = &self.brokers[self.partitions[partition].broker as usize];
            self.sched.schedule(now + b.nic.model.one_way(), Some(b.pid), Ev::BrokerAck { msg: e.token, bookie })?;
        }
        self.kick(bookie, now)
    }

    fn on_broker_ack(&mut self, id: u64, bookie: u32, now: SimTime) -> Result<(), SimError> {
        let qa = self.sc.ensemble.qa as u8;
        let m = self.msgs.get(id)?;
        m.acks += 1;
        let part_idx = m.partition as usize;
        let broker = self.partitions[part_idx].broker as usize;
        let b = &mut self.brokers[broker];
        self.trace.record(now, "broker_ack", &[&b.name, &id, &self.bookies[bookie as usize].name]);
        if m.acks != qa {
            return Ok(());
        }
        m.acked = true;
        let latency = now - m.publish_at;
        let ensemble = now - m.sent_at;
        self.trace.record(now, "publish_ack", &[&id, &latency.as_nanos(), &ensemble.as_nanos()]);
        self.publish.record(latency);
        b.publish.record(latency);
        b.rates.acked(now.as_nanos());
        self.counters.acked += 1;
        self.release(part_idx, now)
    }

    /// Hands acknowledged messages to dispatch in entry order.
    fn release(&mut self, partition: usize, now: SimTime) -> Result<(), SimError> {
        while let Some(&front) = self.partitions[partition].pending.front() {
            let m = self.msgs.get(front)?;
            if !m.acked {
                break;
            }
            self.partitions[partition].pending.pop_front();
            if self.subscription.is_empty() {
                m.done = true;
                continue;
            }
            let key = &mut self.keys[m.key as usize];
            let at = (now + self.sc.processing.dispatch.sample(&mut self.dispatch_rng)).max(key.last_deliver);
            key.last_deliver = at;
            self.sched.schedule(at, None, Ev::Deliver(front))?;
        }
        self.msgs.compact(self.sc.ensemble.qw as u8);
        Ok(())
    }

    fn on_deliver(&mut self, id: u64, now: SimTime) -> Result<(), SimError> {
        let m = self.msgs.get(id)?;
        m.done = true;
        let m = *m;
        let consumer = self.subscription.assign(self.keys[m.key as usize].hash16)?;
        self.trace.record(now, "deliver", &[&id, &m.key, &m.key_seq, &consumer]);
        self.e2e.record(now - m.publish_at);
        self.counters.delivered += 1;
        let broker = self.partitions[m.partition as usize].broker as usize;
        self.brokers[broker].rates.delivered(now.as_nanos());
        self.msgs.compact(self.sc.ensemble.qw as u8);
        Ok(())
    }

    fn on_sync_tick(&mut self, bookie: u32, now: SimTime) -> Result<(), SimError> {
        let bk = &mut self.bookies[bookie as usize];
        let layer = &mut self.layers[bk.ledger_layer];
        let before = layer.windows.len();
        let bytes = bk.bookie.cache.cached_bytes;
        sync_thread_tick(&mut bk.bookie.cache, layer, now);
        self.trace.record(now, "sync_tick", &[&bk.name, &bytes]);
        if layer.windows.len() > before {
            let w = *layer.windows.last().expect("window just opened");
            self.trace.record(now, "contention", &[&self.layer_names[bk.ledger_layer], &w.start.as_nanos(), &w.end.as_nanos(), &w.burst_bytes]);
        }
        self.sched.schedule_after(self.sc.flush_interval, Some(bk.pid), Ev::SyncTick(bookie))?;
        Ok(())
    }

    fn finish(self) -> Result<SimReport, SimError> {
        let mut counters = self.counters;
        counters.in_flight = counters.published - counters.acked;
        if !counters.balanced() {
            return Err(SimError::Invariant(format!("message conservation broken: {counters:?}")));
        }
        let events_fired = self.sched.fired();
        let fingerprint = self.sched.fingerprint();
        self.trace.finish().map_err(|e| SimError::Invariant(format!("trace write failed: {e}")))?;

        let horizon = self.horizon;
        let mut contention = Vec::new();
        let mut layers = Vec::new();
        for (l, name) in self.layers.iter().zip(&self.layer_names) {
            let mut inside = SimDuration::ZERO;
            for w in &l.windows {
                contention.push(ContentionRecord { layer: name.clone(), start: w.start, end: w.end, burst_bytes: w.burst_bytes });
                inside += w.end.min(horizon).saturating_since(w.start.min(horizon));
            }
            let frac = if self.sc.duration.is_zero() { 0.0 } else { inside.as_secs_f64() / self.sc.duration.as_secs_f64() };
            layers.push(LayerStats {
                name: name.clone(),
                windows: l.windows.len(),
                contention: inside,
                system_cpu_pct: CPU_IDLE_PCT + (CPU_BURST_PCT - CPU_IDLE_PCT) * frac,
            });
        }
        contention.sort_by(|a, b| (a.start, &a.layer).cmp(&(b.start, &b.layer)));
        let brokers = self
            .brokers
            .into_iter()
            .map(|b| BrokerStats { name: b.name, publish: b.publish, rates: b.rates, nic_bandwidth: b.nic.model.bandwidth, tx_bits: b.nic.bits_sent })
            .collect();
        let components = decompose(&self.samples, &self.publish);
        Ok(SimReport {
            name: self.sc.name.clone(),
            seed: self.sc.seed,
            duration: self.sc.duration,
            publish: self.publish,
            e2e: self.e2e,
            brokers,
            samples: self.samples,
            components,
            counters,
            contention,
            layers,
            gc_pauses: self.gc_pauses,
            fsyncs: self.fsyncs,
            contended_fsyncs: self.contended_fsyncs,
            max_journal_queue: self.max_journal_queue,
            events_fired,
            fingerprint,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;

    const ONE_HOP: &str = "\
[run]
duration = 1s

[producer p]
rate = 1

[ensemble]
e = 1
qw = 1
qa = 1

[journal]
group_wait = 0ms

[processing]
broker_p50 = 1ms
broker_sigma = 0
bookie_p50 = 1ms
bookie_sigma = 0

[layer host]

[device d]
tier = new_nvme
fsync_sigma = 0
layer = host

[nic n]
bandwidth = 10Gbps
base_rtt = 200us

[broker b]
nic = n

[bookie k]
journal = d
";

    #[test]
    fn single_message_latency_is_the_path_sum() {
        let r = run(&parse_scenario(ONE_HOP).unwrap()).unwrap();
        assert_eq!(r.counters.published, 1);
        assert_eq!(r.counters.acked, 1);
        // broker 1 ms + 560 ns on the wire + 100 us + bookie 1 ms + fsync 20 us + 100 us
        let expect = SimDuration::from_nanos(1_000_000 + 560 + 100_000 + 1_000_000 + 20_000 + 100_000);
        assert_eq!(r.publish.max(), Some(expect));
        assert_eq!(r.publish.min(), Some(expect));
    }

    #[test]
    fn message_count_is_exact() {
        let text = ONE_HOP.replace("rate = 1\n", "rate = 3000\n").replace("duration = 1s", "duration = 2s");
        let r = run(&parse_scenario(&text).unwrap()).unwrap();
        assert_eq!(r.counters.published, 6000);
        assert!(r.counters.balanced());
    }

    #[test]
    fn trace_does_not_change_the_run() {
        let text = ONE_HOP.replace("rate = 1\n", "rate = 500\n");
        let sc = parse_scenario(&text).unwrap();
        let plain = run(&sc).unwrap();
        let mut buf = Vec::new();
        let traced = run_traced(&sc, Some(&mut buf)).unwrap();
        assert_eq!(plain, traced);
        assert!(!buf.is_empty());
    }

    #[test]
    fn invalid_scenario_is_refused() {
        let mut sc = parse_scenario(ONE_HOP).unwrap();
        sc.ensemble.qa = 2;
        assert!(matches!(run(&sc), Err(SimError::Invariant(_))));
    }
}
