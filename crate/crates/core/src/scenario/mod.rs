//! Scenario configuration: the in-memory model, its validation, and the
//! canonical text rendering. Parsing lives in [`parse`], the preset library
//! in [`presets`], output files in [`report`].

pub mod parse;
pub mod presets;
pub mod report;

use std::fmt::Write as _;

use crate::bookie::JournalConfig;
use crate::broker::{EnsembleConfig, NicModel};
use crate::dist::LogNormalLatency;
use crate::jvm::{GcKind, GcModel};
use crate::routing::{FederationMap, PartitionRange, RoutingMode};
use crate::storage::{DeviceTier, OsTunables};
use crate::time::{format_bandwidth, format_byte_rate, format_bytes, format_duration, SimDuration};

pub use parse::{apply_override, parse_document, parse_scenario, Document, Override, ValidationError};

/// Largest supported write quorum.
pub const MAX_QW: u32 = 8;

pub const DEFAULT_CLUSTER: &str = "default";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Arrival {
    /// Message n leaves at exactly n / rate seconds.
    #[default]
    Fixed,
    /// Fixed schedule plus a seeded uniform offset in `[0, jitter)` of one
    /// inter-arrival gap.
    Jitter,
}

impl Arrival {
    pub fn as_str(self) -> &'static str {
        match self {
            Arrival::Fixed => "fixed",
            Arrival::Jitter => "jitter",
        }
    }
}

impl std::str::FromStr for Arrival {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fixed" => Ok(Arrival::Fixed),
            "jitter" => Ok(Arrival::Jitter),
            other => Err(format!("unknown arrival '{other}' (fixed, jitter)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProducerSpec {
    pub name: String,
    /// Messages per second.
    pub rate: u64,
    pub message_size: u64,
    pub keys: u32,
    pub key_prefix: String,
    pub arrival: Arrival,
    pub jitter: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopicSpec {
    pub partitions: u32,
    pub routing: RoutingMode,
    /// Key_Shared consumers on the subscription; 0 disables dispatch.
    pub consumers: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProcessingSpec {
    pub broker: LogNormalLatency,
    pub bookie: LogNormalLatency,
    pub dispatch: LogNormalLatency,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcSpec {
    pub name: String,
    pub model: GcModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub total_ram: u64,
    pub drain_rate: u64,
    pub degraded_lo: SimDuration,
    pub degraded_hi: SimDuration,
    pub tunables: OsTunables,
    pub background_write_rate: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceSpec {
    pub name: String,
    pub tier: DeviceTier,
    pub fsync_p50: SimDuration,
    pub fsync_sigma: f64,
    pub layer: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NicSpec {
    pub name: String,
    pub model: NicModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BrokerSpec {
    pub name: String,
    pub cluster: String,
    pub nic: String,
    pub gc: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BookieSpec {
    pub name: String,
    pub cluster: String,
    pub journal: String,
    pub ledger: String,
    pub gc: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub duration: SimDuration,
    pub seed: u64,
    pub producers: Vec<ProducerSpec>,
    pub ensemble: EnsembleConfig,
    pub topic: TopicSpec,
    pub journal: JournalConfig,
    pub flush_interval: SimDuration,
    pub processing: ProcessingSpec,
    pub gc: Vec<GcSpec>,
    pub layers: Vec<LayerSpec>,
    pub devices: Vec<DeviceSpec>,
    pub nics: Vec<NicSpec>,
    pub brokers: Vec<BrokerSpec>,
    pub bookies: Vec<BookieSpec>,
    /// Partition ranges per cluster; empty means one cluster owns all.
    pub federation: Vec<PartitionRange>,
    pub trace: bool,
}

/// Where a validation problem sits in the scenario text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Loc {
    Section { kind: &'static str, name: Option<String> },
    Key { kind: &'static str, name: Option<String>, key: &'static str },
}

impl Loc {
    fn key(kind: &'static str, name: &str, key: &'static str) -> Loc {
        Loc::Key { kind, name: (!name.is_empty()).then(|| name.to_string()), key }
    }

    fn top(kind: &'static str, key: &'static str) -> Loc {
        Loc::Key { kind, name: None, key }
    }
}

impl Scenario {
    pub fn gc_model(&self, name: &str) -> Option<GcModel> {
        if name == "none" {
            return Some(GcModel::none());
        }
        self.gc.iter().find(|g| g.name == name).map(|g| g.model.clone())
    }

    /// Cluster names in first-appearance order over brokers.
    pub fn clusters(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for b in &self.brokers {
            if !out.contains(&b.cluster) {
                out.push(b.cluster.clone());
            }
        }
        out
    }

    pub fn federation_map(&self) -> Result<FederationMap, String> {
        if self.federation.is_empty() {
            let clusters = self.clusters();
            let name = clusters.first().map(String::as_str).unwrap_or(DEFAULT_CLUSTER);
            let mut m = FederationMap::single(name, self.topic.partitions.max(1));
            if self.topic.routing != RoutingMode::Hash {
                m = FederationMap::new(m.total_partitions(), m.ranges().to_vec(), self.topic.routing)?;
            }
            return Ok(m);
        }
        FederationMap::new(self.topic.partitions, self.federation.clone(), self.topic.routing)
    }

    /// Every invariant violation, each tagged with its location.
    pub fn validate(&self) -> Vec<(Loc, String)> {
        let mut errs: Vec<(Loc, String)> = Vec::new();
        let mut err = |loc: Loc, msg: String| errs.push((loc, msg));

        if self.duration.is_zero() {
            err(Loc::top("run", "duration"), "duration must be > 0".into());
        }
        for p in &self.producers {
            if p.rate == 0 {
                err(Loc::key("producer", &p.name, "rate"), "rate must be > 0".into());
            }
            if p.message_size == 0 {
                err(Loc::key("producer", &p.name, "message_size"), "message_size must be > 0".into());
            }
            if p.keys == 0 {
                err(Loc::key("producer", &p.name, "keys"), "keys must be > 0".into());
            }
            if !(0.0..1.0).contains(&p.jitter) {
                err(Loc::key("producer", &p.name, "jitter"), format!("jitter {} outside [0, 1)", p.jitter));
            }
        }
        if let Err(e) = self.ensemble.validate() {
            err(Loc::Section { kind: "ensemble", name: None }, e);
        } else if self.ensemble.qw > MAX_QW {
            err(Loc::top("ensemble", "qw"), format!("qw must be <= {MAX_QW}"));
        }
        if self.topic.partitions == 0 {
            err(Loc::top("topic", "partitions"), "partitions must be > 0".into());
        }
        if self.journal.group_max_entries == 0 {
            err(Loc::top("journal", "group_max_entries"), "group_max_entries must be > 0".into());
        }
        if self.flush_interval.is_zero() {
            err(Loc::top("write_cache", "flush_interval"), "flush_interval must be > 0".into());
        }
        for (key, d) in [("broker_sigma", &self.processing.broker), ("bookie_sigma", &self.processing.bookie), ("dispatch_sigma", &self.processing.dispatch)] {
            if !d.sigma.is_finite() || d.sigma < 0.0 {
                err(Loc::top("processing", key), "sigma must be a finite number >= 0".into());
            }
        }
        for g in &self.gc {
            if g.name == "none" {
                err(Loc::Section { kind: "gc", name: Some(g.name.clone()) }, "'none' is reserved".into());
            }
            if let Err(e) = g.model.validate() {
                err(Loc::Section { kind: "gc", name: Some(g.name.clone()) }, e);
            }
        }
        for l in &self.layers {
            let cfg = crate::storage::BlockLayerConfig {
                id: crate::storage::LayerId(0),
                total_ram: l.total_ram,
                drain_rate: l.drain_rate,
                degraded_lo: l.degraded_lo,
                degraded_hi: l.degraded_hi,
                tunables: l.tunables,
                background_write_rate: l.background_write_rate,
            };
            if let Err(e) = cfg.validate() {
                err(Loc::Section { kind: "layer", name: Some(l.name.clone()) }, e);
            }
        }
        for d in &self.devices {
            if !self.layers.iter().any(|l| l.name == d.layer) {
                err(Loc::key("device", &d.name, "layer"), format!("unknown layer '{}'", d.layer));
            }
            if !d.fsync_sigma.is_finite() || d.fsync_sigma < 0.0 {
                err(Loc::key("device", &d.name, "fsync_sigma"), "fsync_sigma must be a finite number >= 0".into());
            }
        }
        for n in &self.nics {
            if let Err(e) = n.model.validate() {
                err(Loc::key("nic", &n.name, "bandwidth"), e);
            }
        }
        let gc_known = |name: &str| name == "none" || self.gc.iter().any(|g| g.name == name);
        if self.brokers.is_empty() && !self.producers.is_empty() {
            err(Loc::Section { kind: "broker", name: None }, "producers need at least one broker".into());
        }
        for b in &self.brokers {
            if !self.nics.iter().any(|n| n.name == b.nic) {
                err(Loc::key("broker", &b.name, "nic"), format!("unknown nic '{}'", b.nic));
            }
            if !gc_known(&b.gc) {
                err(Loc::key("broker", &b.name, "gc"), format!("unknown gc '{}'", b.gc));
            }
        }
        for b in &self.bookies {
            for (key, dev) in [("journal", &b.journal), ("ledger", &b.ledger)] {
                if !self.devices.iter().any(|d| &d.name == dev) {
                    err(Loc::key("bookie", &b.name, key), format!("unknown device '{dev}'"));
                }
            }
            if !gc_known(&b.gc) {
                err(Loc::key("bookie", &b.name, "gc"), format!("unknown gc '{}'", b.gc));
            }
        }
        for cluster in self.clusters() {
            let n = self.bookies.iter().filter(|b| b.cluster == cluster).count() as u32;
            if n < self.ensemble.e {
                err(Loc::top("ensemble", "e"), format!("cluster '{cluster}' has {n} bookies, fewer than e={}", self.ensemble.e));
            }
        }
        for b in &self.bookies {
            if !self.brokers.iter().any(|br| br.cluster == b.cluster) {
                err(Loc::key("bookie", &b.name, "cluster"), format!("cluster '{}' has no broker", b.cluster));
            }
        }
        let mut names: Vec<(&'static str, &str)> = Vec::new();
        names.extend(self.producers.iter().map(|x| ("producer", x.name.as_str())));
        names.extend(self.gc.iter().map(|x| ("gc", x.name.as_str())));
        names.extend(self.layers.iter().map(|x| ("layer", x.name.as_str())));
        names.extend(self.devices.iter().map(|x| ("device", x.name.as_str())));
        names.extend(self.nics.iter().map(|x| ("nic", x.name.as_str())));
        names.extend(self.brokers.iter().map(|x| ("broker", x.name.as_str())));
        names.extend(self.bookies.iter().map(|x| ("bookie", x.name.as_str())));
        for (i, (kind, name)) in names.iter().enumerate() {
            if names[..i].contains(&(kind, name)) {
                err(Loc::Section { kind, name: Some(name.to_string()) }, format!("duplicate {kind} '{name}'"));
            }
            if name.is_empty() || name.chars().any(|c| c.is_whitespace() || c == '.') {
                err(Loc::Section { kind, name: Some(name.to_string()) }, format!("invalid {kind} name '{name}'"));
            }
        }
        let procs: Vec<&str> = self.brokers.iter().map(|b| b.name.as_str()).chain(self.bookies.iter().map(|b| b.name.as_str())).collect();
        for (i, p) in procs.iter().enumerate() {
            if procs[..i].contains(p) {
                err(Loc::Section { kind: "bookie", name: Some(p.to_string()) }, format!("'{p}' names both a broker and a bookie"));
            }
        }
        if !self.federation.is_empty() {
            match self.federation_map() {
                Err(e) => err(Loc::Section { kind: "federation", name: None }, e),
                Ok(m) => {
                    for r in m.ranges() {
                        if !self.brokers.iter().any(|b| b.cluster == r.cluster) {
                            err(Loc::Section { kind: "federation", name: None }, format!("cluster '{}' has no broker", r.cluster));
                        }
                    }
                    for c in self.clusters() {
                        if !m.ranges().iter().any(|r| r.cluster == c) {
                            err(Loc::Section { kind: "federation", name: None }, format!("cluster '{c}' owns no partitions"));
                        }
                    }
                }
            }
        } else if self.clusters().len() > 1 {
            err(Loc::Section { kind: "federation", name: None }, "several clusters need a [federation] map".into());
        }
        errs
    }

    /// Canonical text form; `parse_scenario(s.to_text())` yields `s`.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let w = &mut o;
        let _ = writeln!(w, "[run]");
        let _ = writeln!(w, "name = {}", self.name);
        let _ = writeln!(w, "duration = {}", format_duration(self.duration));
        let _ = writeln!(w, "seed = {}", self.seed);
        for p in &self.producers {
            let _ = writeln!(w, "\n[producer {}]", p.name);
            let _ = writeln!(w, "rate = {}", p.rate);
            let _ = writeln!(w, "message_size = {}", format_bytes(p.message_size));
            let _ = writeln!(w, "keys = {}", p.keys);
            let _ = writeln!(w, "key_prefix = {}", p.key_prefix);
            let _ = writeln!(w, "arrival = {}", p.arrival.as_str());
            let _ = writeln!(w, "jitter = {}", p.jitter);
        }
        let _ = writeln!(w, "\n[ensemble]\ne = {}\nqw = {}\nqa = {}", self.ensemble.e, self.ensemble.qw, self.ensemble.qa);
        let _ = writeln!(w, "\n[topic]\npartitions = {}\nrouting = {}\nconsumers = {}", self.topic.partitions, self.topic.routing, self.topic.consumers);
        let _ = writeln!(
            w,
            "\n[journal]\ngroup_wait = {}\ngroup_max_entries = {}",
            format_duration(self.journal.group_wait),
            self.journal.group_max_entries
        );
        let _ = writeln!(w, "\n[write_cache]\nflush_interval = {}", format_duration(self.flush_interval));
        let pr = &self.processing;
        let _ = writeln!(w, "\n[processing]");
        for (name, d) in [("broker", &pr.broker), ("bookie", &pr.bookie), ("dispatch", &pr.dispatch)] {
            let _ = writeln!(w, "{name}_p50 = {}\n{name}_sigma = {}", format_duration(d.median), d.sigma);
        }
        for g in &self.gc {
            let m = &g.model;
            let _ = writeln!(w, "\n[gc {}]", g.name);
            let _ = writeln!(w, "kind = {}", m.kind);
            let _ = writeln!(w, "heap_gb = {}", m.heap_gb);
            if m.kind != GcKind::None {
                let _ = writeln!(w, "pause_p50 = {}", format_duration(m.pause_p50));
                let _ = writeln!(w, "pause_max = {}", format_duration(m.pause_max));
                let _ = writeln!(w, "mean_interval = {}", format_duration(m.mean_interval));
                let _ = writeln!(w, "tail_fraction = {}", m.tail_fraction);
                let _ = writeln!(w, "body_sigma = {}", m.body_sigma);
            }
        }
        for l in &self.layers {
            let t = &l.tunables;
            let _ = writeln!(w, "\n[layer {}]", l.name);
            let _ = writeln!(w, "total_ram = {}", format_bytes(l.total_ram));
            let _ = writeln!(w, "drain_rate = {}", format_byte_rate(l.drain_rate));
            let _ = writeln!(w, "degraded_lo = {}", format_duration(l.degraded_lo));
            let _ = writeln!(w, "degraded_hi = {}", format_duration(l.degraded_hi));
            let _ = writeln!(w, "dirty_ratio = {}", t.dirty_ratio);
            let _ = writeln!(w, "dirty_background_ratio = {}", t.dirty_background_ratio);
            let _ = writeln!(w, "dirty_expire_centisecs = {}", t.dirty_expire_centisecs);
            let _ = writeln!(w, "dirty_writeback_centisecs = {}", t.dirty_writeback_centisecs);
            let _ = writeln!(w, "background_write_rate = {}", format_byte_rate(l.background_write_rate));
        }
        for d in &self.devices {
            let _ = writeln!(w, "\n[device {}]", d.name);
            let _ = writeln!(w, "tier = {}", d.tier);
            let _ = writeln!(w, "fsync_p50 = {}", format_duration(d.fsync_p50));
            let _ = writeln!(w, "fsync_sigma = {}", d.fsync_sigma);
            let _ = writeln!(w, "layer = {}", d.layer);
        }
        for n in &self.nics {
            let _ = writeln!(w, "\n[nic {}]", n.name);
            let _ = writeln!(w, "bandwidth = {}", format_bandwidth(n.model.bandwidth));
            let _ = writeln!(w, "base_rtt = {}", format_duration(n.model.base_rtt));
        }
        for b in &self.brokers {
            let _ = writeln!(w, "\n[broker {}]\ncluster = {}\nnic = {}\ngc = {}", b.name, b.cluster, b.nic, b.gc);
        }
        for b in &self.bookies {
            let _ = writeln!(w, "\n[bookie {}]\ncluster = {}\njournal = {}\nledger = {}\ngc = {}", b.name, b.cluster, b.journal, b.ledger, b.gc);
        }
        if !self.federation.is_empty() {
            let _ = writeln!(w, "\n[federation]");
            for r in &self.federation {
                let _ = writeln!(w, "{} = {}-{}", r.cluster, r.lo, r.hi);
            }
        }
        let _ = writeln!(w, "\n[output]\ntrace = {}", self.trace);
        o
    }
}
