//! Shipped scenario presets. Each one is also checked in as a text file
//! under `presets/`, identical to its [`Scenario::to_text`] rendering.
//!
//! Rates are desk-scaled: the per-message latency models are kept and the
//! offered load is reduced so a run finishes in seconds.

use std::fmt;

use super::{
    Arrival, BookieSpec, BrokerSpec, DeviceSpec, GcSpec, LayerSpec, NicSpec, ProcessingSpec, ProducerSpec, Scenario, TopicSpec,
};
use crate::bookie::{JournalConfig, DEFAULT_GROUP_MAX_ENTRIES};
use crate::broker::{EnsembleConfig, NicModel, DEFAULT_MESSAGE_SIZE};
use crate::dist::LogNormalLatency;
use crate::jvm::GcModel;
use crate::routing::{PartitionRange, RoutingMode};
use crate::storage::{DeviceTier, OsTunables, DEFAULT_FSYNC_SIGMA};
use crate::time::SimDuration;

pub const PRESET_NAMES: [&str; 11] = [
    "prod-baseline",
    "optimized",
    "flush-sweep-15",
    "flush-sweep-30",
    "flush-sweep-60",
    "gc-compare-A",
    "gc-compare-B",
    "gc-compare-C",
    "writeback-demo",
    "nic-25g",
    "federation-15m",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnknownPreset(pub String);

impl fmt::Display for UnknownPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown preset '{}' (known: {})", self.0, PRESET_NAMES.join(", "))
    }
}

impl std::error::Error for UnknownPreset {}

const GIB: u64 = 1 << 30;
const MIB: u64 = 1 << 20;
const HEAP_GB: f64 = 32.0;

fn ms(v: f64) -> SimDuration {
    SimDuration::from_millis_f64(v)
}

fn lat(median_ms: f64) -> LogNormalLatency {
    LogNormalLatency::new(ms(median_ms), 0.25)
}

/// Per-component latency inputs of a preset family.
struct Calibration {
    broker: f64,
    bookie: f64,
    dispatch: f64,
    rtt: f64,
    group_wait: f64,
}

/// Production clusters before any change.
const BASELINE: Calibration = Calibration { broker: 4.3, bookie: 3.8, dispatch: 0.0, rtt: 0.2, group_wait: 2.0 };
/// All optimizations applied.
const OPTIMIZED: Calibration = Calibration { broker: 0.8, bookie: 1.86, dispatch: 10.6, rtt: 0.2, group_wait: 1.0 };
/// The dedicated test cluster used for the single-knob experiments.
const TEST_CLUSTER: Calibration = Calibration { broker: 0.15, bookie: 0.2, dispatch: 0.0, rtt: 0.05, group_wait: 1.0 };

/// How one host is provisioned.
#[derive(Clone)]
struct HostKit {
    journal: DeviceTier,
    /// Journal devices get a block layer of their own.
    separate_journal_layer: bool,
    ram: u64,
    drain_rate: u64,
    tunables: OsTunables,
    broker_gc: &'static str,
    bookie_gc: &'static str,
}

/// Hosts, brokers and bookies of one cluster.
struct ClusterShape {
    cluster: &'static str,
    prefix: &'static str,
    hosts: u32,
    brokers: u32,
    bookies: u32,
    nic: &'static str,
}

fn base(name: &str, rate: u64, duration: SimDuration, cal: &Calibration) -> Scenario {
    Scenario {
        name: name.to_string(),
        duration,
        seed: 1,
        producers: vec![ProducerSpec {
            name: "load".into(),
            rate,
            message_size: DEFAULT_MESSAGE_SIZE,
            keys: 10_000,
            key_prefix: "acct-".into(),
            arrival: Arrival::Fixed,
            jitter: 0.0,
        }],
        ensemble: EnsembleConfig { e: 3, qw: 2, qa: 2 },
        topic: TopicSpec { partitions: 128, routing: RoutingMode::Hash, consumers: 0 },
        journal: JournalConfig { group_wait: ms(cal.group_wait), group_max_entries: DEFAULT_GROUP_MAX_ENTRIES },
        flush_interval: SimDuration::from_secs(60),
        processing: ProcessingSpec { broker: lat(cal.broker), bookie: lat(cal.bookie), dispatch: lat(cal.dispatch) },
        gc: Vec::new(),
        layers: Vec::new(),
        devices: Vec::new(),
        nics: Vec::new(),
        brokers: Vec::new(),
        bookies: Vec::new(),
        federation: Vec::new(),
        trace: false,
    }
}

fn add_nic(sc: &mut Scenario, name: &str, bandwidth: u64, cal: &Calibration) {
    sc.nics.push(NicSpec { name: name.into(), model: NicModel { bandwidth, base_rtt: ms(cal.rtt) } });
}

fn add_gc(sc: &mut Scenario, names: &[&str]) {
    for &n in names {
        let model = match n {
            "g1" => GcModel::g1_like(HEAP_GB),
            "zgc" => GcModel::zgc_like(HEAP_GB),
            _ => unreachable!("preset gc '{n}'"),
        };
        if !sc.gc.iter().any(|g| g.name == n) {
            sc.gc.push(GcSpec { name: n.into(), model });
        }
    }
}

/// Adds a cluster. Broker and bookie `i` live on host `i % hosts`.
fn add_cluster(sc: &mut Scenario, shape: &ClusterShape, kit: &HostKit) {
    let p = shape.prefix;
    for h in 0..shape.hosts {
        let layer = |name: String| LayerSpec {
            name,
            total_ram: kit.ram,
            drain_rate: kit.drain_rate,
            degraded_lo: ms(15.0),
            degraded_hi: ms(22.0),
            tunables: kit.tunables,
            background_write_rate: 0,
        };
        sc.layers.push(layer(format!("{p}host{h}")));
        if kit.separate_journal_layer {
            sc.layers.push(layer(format!("{p}host{h}-journal")));
        }
    }
    for i in 0..shape.brokers {
        sc.brokers.push(BrokerSpec {
            name: format!("{p}broker{i}"),
            cluster: shape.cluster.into(),
            nic: shape.nic.into(),
            gc: kit.broker_gc.into(),
        });
    }
    for i in 0..shape.bookies {
        let host = format!("{p}host{}", i % shape.hosts);
        let journal_layer = if kit.separate_journal_layer { format!("{host}-journal") } else { host.clone() };
        let tier_p50 = kit.journal.preset_p50().expect("preset tiers have a median");
        sc.devices.push(DeviceSpec {
            name: format!("{p}bookie{i}-journal"),
            tier: kit.journal,
            fsync_p50: tier_p50,
            fsync_sigma: DEFAULT_FSYNC_SIGMA,
            layer: journal_layer,
        });
        sc.devices.push(DeviceSpec {
            name: format!("{p}bookie{i}-ledger"),
            tier: DeviceTier::NewNvme,
            fsync_p50: DeviceTier::NewNvme.preset_p50().expect("tier median"),
            fsync_sigma: DEFAULT_FSYNC_SIGMA,
            layer: host,
        });
        sc.bookies.push(BookieSpec {
            name: format!("{p}bookie{i}"),
            cluster: shape.cluster.into(),
            journal: format!("{p}bookie{i}-journal"),
            ledger: format!("{p}bookie{i}-ledger"),
            gc: kit.bookie_gc.into(),
        });
    }
    let mut gcs = vec![kit.broker_gc, kit.bookie_gc];
    gcs.retain(|g| *g != "none");
    add_gc(sc, &gcs);
}

/// Three hosts, each running two brokers and two bookies.
const THREE_NODES: ClusterShape = ClusterShape { cluster: "default", prefix: "", hosts: 3, brokers: 6, bookies: 6, nic: "nic10g" };

/// Desk-scaled page cache: a small host RAM and a slow writeback path, so
/// that flush bursts of a desk-scale load keep their production proportions.
fn scaled_cache(tunables: OsTunables) -> (u64, u64, OsTunables) {
    (3 * GIB / 2, 64 * MIB, tunables)
}

fn prod_baseline() -> Scenario {
    let mut sc = base("prod-baseline", 3_000, SimDuration::from_secs(60), &BASELINE);
    add_nic(&mut sc, "nic10g", 10_000_000_000, &BASELINE);
    let kit = HostKit {
        journal: DeviceTier::WornSsd,
        separate_journal_layer: false,
        ram: 64 * GIB,
        drain_rate: GIB,
        tunables: OsTunables::UNTUNED,
        broker_gc: "g1",
        bookie_gc: "g1",
    };
    add_cluster(&mut sc, &THREE_NODES, &kit);
    sc
}

fn optimized() -> Scenario {
    let mut sc = base("optimized", 50_000, SimDuration::from_secs(60), &OPTIMIZED);
    sc.flush_interval = SimDuration::from_secs(30);
    sc.topic.consumers = 6;
    add_nic(&mut sc, "nic10g", 10_000_000_000, &OPTIMIZED);
    let kit = HostKit {
        journal: DeviceTier::NewNvme,
        separate_journal_layer: false,
        ram: 64 * GIB,
        drain_rate: GIB,
        tunables: OsTunables::TUNED,
        broker_gc: "zgc",
        bookie_gc: "zgc",
    };
    add_cluster(&mut sc, &THREE_NODES, &kit);
    sc
}

fn test_cluster(name: &str, duration: SimDuration, flush_secs: u64, broker_gc: &'static str, bookie_gc: &'static str, separate: bool) -> Scenario {
    let mut sc = base(name, 5_000, duration, &TEST_CLUSTER);
    sc.flush_interval = SimDuration::from_secs(flush_secs);
    add_nic(&mut sc, "nic10g", 10_000_000_000, &TEST_CLUSTER);
    let (ram, drain_rate, tunables) = scaled_cache(OsTunables::UNTUNED);
    let kit = HostKit { journal: DeviceTier::NewNvme, separate_journal_layer: separate, ram, drain_rate, tunables, broker_gc, bookie_gc };
    add_cluster(&mut sc, &THREE_NODES, &kit);
    sc
}

fn flush_sweep(secs: u64) -> Scenario {
    test_cluster(&format!("flush-sweep-{secs}"), SimDuration::from_secs(300), secs, "zgc", "zgc", false)
}

fn gc_compare(variant: char) -> Scenario {
    let (broker_gc, bookie_gc) = match variant {
        'A' => ("g1", "g1"),
        'B' => ("g1", "zgc"),
        _ => ("zgc", "zgc"),
    };
    test_cluster(&format!("gc-compare-{variant}"), SimDuration::from_secs(600), 60, broker_gc, bookie_gc, true)
}

fn writeback_demo() -> Scenario {
    let mut sc = test_cluster("writeback-demo", SimDuration::from_secs(150), 60, "zgc", "zgc", false);
    sc.trace = true;
    sc
}

/// One broker on a desk-scaled 25 Gbps link (250 Mbps), offered 120% of
/// what the link can carry for two copies of each message.
fn nic_25g() -> Scenario {
    let bandwidth = 250_000_000u64;
    let wire_bits = 2 * DEFAULT_MESSAGE_SIZE * 8;
    let rate = (bandwidth as f64 * 1.2 / wire_bits as f64).round() as u64;
    let mut sc = base("nic-25g", rate, SimDuration::from_secs(20), &OPTIMIZED);
    sc.flush_interval = SimDuration::from_secs(30);
    add_nic(&mut sc, "nic25g", bandwidth, &OPTIMIZED);
    let kit = HostKit {
        journal: DeviceTier::NewNvme,
        separate_journal_layer: false,
        ram: 64 * GIB,
        drain_rate: GIB,
        tunables: OsTunables::TUNED,
        broker_gc: "zgc",
        bookie_gc: "zgc",
    };
    let shape = ClusterShape { cluster: "default", prefix: "", hosts: 3, brokers: 1, bookies: 3, nic: "nic25g" };
    add_cluster(&mut sc, &shape, &kit);
    sc
}

/// Five independent three-node clusters sharing one 128-partition topic.
fn federation_15m() -> Scenario {
    let mut sc = base("federation-15m", 5_000, SimDuration::from_secs(10), &OPTIMIZED);
    sc.flush_interval = SimDuration::from_secs(30);
    sc.topic.consumers = 8;
    add_nic(&mut sc, "nic25g", 25_000_000_000, &OPTIMIZED);
    let kit = HostKit {
        journal: DeviceTier::NewNvme,
        separate_journal_layer: false,
        ram: 64 * GIB,
        drain_rate: GIB,
        tunables: OsTunables::TUNED,
        broker_gc: "zgc",
        bookie_gc: "zgc",
    };
    let ranges = [("cluster-1", "c1-", 0, 25), ("cluster-2", "c2-", 26, 51), ("cluster-3", "c3-", 52, 77), ("cluster-4", "c4-", 78, 102), ("cluster-5", "c5-", 103, 127)];
    for (cluster, prefix, lo, hi) in ranges {
        let shape = ClusterShape { cluster, prefix, hosts: 3, brokers: 3, bookies: 3, nic: "nic25g" };
        add_cluster(&mut sc, &shape, &kit);
        sc.federation.push(PartitionRange { cluster: cluster.into(), lo, hi });
    }
    sc
}

pub fn preset(name: &str) -> Result<Scenario, UnknownPreset> {
    Ok(match name {
        "prod-baseline" => prod_baseline(),
        "optimized" => optimized(),
        "flush-sweep-15" => flush_sweep(15),
        "flush-sweep-30" => flush_sweep(30),
        "flush-sweep-60" => flush_sweep(60),
        "gc-compare-A" => gc_compare('A'),
        "gc-compare-B" => gc_compare('B'),
        "gc-compare-C" => gc_compare('C'),
        "writeback-demo" => writeback_demo(),
        "nic-25g" => nic_25g(),
        "federation-15m" => federation_15m(),
        other => return Err(UnknownPreset(other.to_string())),
    })
}

/// File name a preset ships under.
pub fn file_name(name: &str) -> String {
    format!("{name}.scn")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jvm::GcKind;
    use crate::scenario::parse_scenario;

    #[test]
    fn every_preset_is_valid_and_round_trips() {
        for name in PRESET_NAMES {
            let sc = preset(name).unwrap();
            assert!(sc.validate().is_empty(), "{name}: {:?}", sc.validate());
            let back = parse_scenario(&sc.to_text()).unwrap_or_else(|e| panic!("{name}: {e:?}"));
            assert_eq!(back, sc, "{name}");
        }
    }

    #[test]
    fn shipped_files_match() {
        let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("presets");
        for name in PRESET_NAMES {
            let text = std::fs::read_to_string(dir.join(file_name(name))).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(text, preset(name).unwrap().to_text(), "{name}");
        }
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert_eq!(preset("fastest").unwrap_err(), UnknownPreset("fastest".into()));
    }

    #[test]
    fn prod_baseline_contents() {
        let sc = preset("prod-baseline").unwrap();
        assert!(sc.devices.iter().filter(|d| d.name.ends_with("-journal")).all(|d| d.tier == DeviceTier::WornSsd));
        assert_eq!(sc.journal.group_wait, SimDuration::from_millis(2));
        assert_eq!(sc.flush_interval, SimDuration::from_secs(60));
        assert!(sc.brokers.iter().all(|b| sc.gc_model(&b.gc).unwrap().kind == GcKind::G1Like));
        assert!(sc.bookies.iter().all(|b| sc.gc_model(&b.gc).unwrap().kind == GcKind::G1Like));
    }

    #[test]
    fn optimized_contents() {
        let sc = preset("optimized").unwrap();
        assert!(sc.devices.iter().all(|d| d.tier == DeviceTier::NewNvme));
        assert!(sc.bookies.iter().all(|b| sc.gc_model(&b.gc).unwrap().kind == GcKind::ZgcLike));
        assert_eq!(sc.flush_interval, SimDuration::from_secs(30));
        assert_eq!(sc.journal.group_wait, SimDuration::from_millis(1));
        assert!(sc.nics.iter().all(|n| n.model.bandwidth == 10_000_000_000));
        assert!(sc.layers.iter().all(|l| l.tunables == OsTunables::TUNED));
        assert_eq!((sc.ensemble.e, sc.ensemble.qw, sc.ensemble.qa, sc.topic.partitions), (3, 2, 2, 128));
    }

    #[test]
    fn gc_compare_a_runs_g1_everywhere() {
        let sc = preset("gc-compare-A").unwrap();
        let kinds: Vec<GcKind> = sc.brokers.iter().map(|b| &b.gc).chain(sc.bookies.iter().map(|b| &b.gc)).map(|g| sc.gc_model(g).unwrap().kind).collect();
        assert!(kinds.iter().all(|k| *k == GcKind::G1Like));
    }

    #[test]
    fn federation_ranges_are_verbatim() {
        let sc = preset("federation-15m").unwrap();
        let r: Vec<(u32, u32)> = sc.federation.iter().map(|r| (r.lo, r.hi)).collect();
        assert_eq!(r, vec![(0, 25), (26, 51), (52, 77), (78, 102), (103, 127)]);
        assert_eq!(sc.clusters().len(), 5);
        assert!(sc.nics.iter().all(|n| n.model.bandwidth == 25_000_000_000));
    }
}
