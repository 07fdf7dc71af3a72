//! Line-oriented scenario format.
//!
//! ```text
//! file     := line*
//! line     := blank | comment | header | entry
//! comment  := '#' any*
//! header   := '[' kind ( ' ' name )? ']'
//! entry    := key '=' value          (a trailing '# ...' is a comment)
//! ```
//!
//! Singleton kinds (`run`, `ensemble`, `topic`, `journal`, `write_cache`,
//! `processing`, `federation`, `output`) take no name and appear at most
//! once. Named kinds (`producer`, `gc`, `layer`, `device`, `nic`, `broker`,
//! `bookie`) require a name. Durations take `ns/us/ms/s/m`, sizes
//! `B/KiB/MiB/GiB`, byte rates `<size>/s`, bandwidth `bps/Kbps/Mbps/Gbps`.

use std::fmt;

use super::{
    Arrival, BookieSpec, BrokerSpec, DeviceSpec, GcSpec, LayerSpec, Loc, NicSpec, ProcessingSpec, ProducerSpec, Scenario,
    TopicSpec, DEFAULT_CLUSTER,
};
use crate::bookie::{JournalConfig, DEFAULT_GROUP_MAX_ENTRIES};
use crate::broker::{EnsembleConfig, NicModel, DEFAULT_MESSAGE_SIZE};
use crate::dist::LogNormalLatency;
use crate::jvm::{GcKind, GcModel};
use crate::routing::{PartitionRange, RoutingMode};
use crate::storage::{DeviceTier, OsTunables, DEFAULT_FSYNC_SIGMA};
use crate::time::{parse_bandwidth, parse_byte_rate, parse_bytes, parse_duration, SimDuration};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    /// 1-based; 0 for entries added by overrides.
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Section {
    pub kind: String,
    pub name: Option<String>,
    pub line: usize,
    pub entries: Vec<Entry>,
}

impl Section {
    fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    fn set(&mut self, key: &str, value: &str) {
        match self.entries.iter_mut().find(|e| e.key == key) {
            Some(e) => e.value = value.to_string(),
            None => self.entries.push(Entry { key: key.to_string(), value: value.to_string(), line: 0 }),
        }
    }
}

/// Syntax tree of a scenario file, before typing.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Document {
    pub sections: Vec<Section>,
}

const SINGLETONS: &[&str] = &["run", "ensemble", "topic", "journal", "write_cache", "processing", "federation", "output"];
const NAMED: &[&str] = &["producer", "gc", "layer", "device", "nic", "broker", "bookie"];

fn schema(kind: &str) -> &'static [&'static str] {
    match kind {
        "run" => &["name", "duration", "seed"],
        "producer" => &["rate", "message_size", "keys", "key_prefix", "arrival", "jitter"],
        "ensemble" => &["e", "qw", "qa"],
        "topic" => &["partitions", "routing", "consumers"],
        "journal" => &["group_wait", "group_max_entries"],
        "write_cache" => &["flush_interval"],
        "processing" => &["broker_p50", "broker_sigma", "bookie_p50", "bookie_sigma", "dispatch_p50", "dispatch_sigma"],
        "gc" => &["kind", "heap_gb", "pause_p50", "pause_max", "mean_interval", "tail_fraction", "body_sigma"],
        "layer" => &[
            "total_ram",
            "drain_rate",
            "degraded_lo",
            "degraded_hi",
            "tunables",
            "dirty_ratio",
            "dirty_background_ratio",
            "dirty_expire_centisecs",
            "dirty_writeback_centisecs",
            "background_write_rate",
        ],
        "device" => &["tier", "fsync_p50", "fsync_sigma", "layer"],
        "nic" => &["bandwidth", "base_rtt"],
        "broker" => &["cluster", "nic", "gc"],
        "bookie" => &["cluster", "journal", "ledger", "gc"],
        "output" => &["trace"],
        _ => &[],
    }
}

fn is_singleton(kind: &str) -> bool {
    SINGLETONS.contains(&kind)
}

fn known_kind(kind: &str) -> bool {
    is_singleton(kind) || NAMED.contains(&kind)
}

fn strip_comment(s: &str) -> &str {
    match s.find('#') {
        Some(i) => &s[..i],
        None => s,
    }
}

pub fn parse_document(text: &str) -> Result<Document, Vec<ValidationError>> {
    let mut doc = Document::default();
    let mut errs = Vec::new();
    let mut e = |line: usize, msg: String| errs.push(ValidationError { line: Some(line), message: msg });
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let Some(inner) = rest.strip_suffix(']') else {
                e(n, format!("malformed section header '{line}'"));
                continue;
            };
            let mut parts = inner.split_whitespace();
            let kind = parts.next().unwrap_or("").to_string();
            let name = parts.next().map(str::to_string);
            if parts.next().is_some() {
                e(n, format!("section header '{line}' has extra words"));
                continue;
            }
            if !known_kind(&kind) {
                e(n, format!("unknown section kind '{kind}'"));
            } else if is_singleton(&kind) && name.is_some() {
                e(n, format!("section [{kind}] takes no name"));
            } else if !is_singleton(&kind) && name.is_none() {
                e(n, format!("section [{kind}] needs a name"));
            } else if is_singleton(&kind) && doc.sections.iter().any(|s| s.kind == kind) {
                e(n, format!("section [{kind}] appears twice"));
            }
            doc.sections.push(Section { kind, name, line: n, entries: Vec::new() });
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            e(n, format!("expected 'key = value', got '{line}'"));
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        let Some(sec) = doc.sections.last_mut() else {
            e(n, format!("entry '{k}' before any section"));
            continue;
        };
        if k.is_empty() {
            e(n, "empty key".into());
            continue;
        }
        if sec.kind != "federation" && known_kind(&sec.kind) && !schema(&sec.kind).contains(&k) {
            e(n, format!("unknown key '{k}' in [{}] (expected one of: {})", sec.kind, schema(&sec.kind).join(", ")));
            continue;
        }
        if sec.get(k).is_some() {
            e(n, format!("key '{k}' repeated in [{}]", sec.kind));
            continue;
        }
        sec.entries.push(Entry { key: k.to_string(), value: v.to_string(), line: n });
    }
    if errs.is_empty() {
        Ok(doc)
    } else {
        Err(errs)
    }
}

/// One `--vary`-style assignment: `key`, `kind.key` or `kind.name.key`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: String,
}

impl Override {
    pub fn new(path: &str, value: &str) -> Result<Self, String> {
        let parts: Vec<String> = path.split('.').map(|s| s.trim().to_string()).collect();
        if parts.is_empty() || parts.len() > 3 || parts.iter().any(String::is_empty) {
            return Err(format!("invalid override key '{path}' (key, kind.key or kind.name.key)"));
        }
        Ok(Override { path: parts, value: value.trim().to_string() })
    }

    pub fn parse(assignment: &str) -> Result<Self, String> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| format!("override '{assignment}' must be key=value"))?;
        Override::new(k, v)
    }
}

impl fmt::Display for Override {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.path.join("."), self.value)
    }
}

fn ensure_singleton<'a>(doc: &'a mut Document, kind: &str) -> &'a mut Section {
    if let Some(i) = doc.sections.iter().position(|s| s.kind == kind) {
        return &mut doc.sections[i];
    }
    doc.sections.push(Section { kind: kind.to_string(), name: None, line: 0, entries: Vec::new() });
    doc.sections.last_mut().expect("just pushed")
}

pub fn apply_override(doc: &mut Document, ov: &Override) -> Result<(), String> {
    match ov.path.as_slice() {
        [key] => {
            let mut kinds: Vec<&str> = SINGLETONS
                .iter()
                .chain(NAMED)
                .copied()
                .filter(|k| schema(k).contains(&key.as_str()))
                .collect();
            if kinds.len() > 1 {
                kinds.retain(|k| doc.sections.iter().any(|s| s.kind == *k));
            }
            match kinds.as_slice() {
                [] => Err(format!("no section has a key '{key}'")),
                [kind] => apply_to_kind(doc, kind, key, &ov.value),
                many => Err(format!(
                    "key '{key}' is ambiguous; qualify it as one of {}",
                    many.iter().map(|k| format!("{k}.{key}")).collect::<Vec<_>>().join(", ")
                )),
            }
        }
        [kind, key] => {
            if kind == "federation" {
                ensure_singleton(doc, kind).set(key, &ov.value);
                return Ok(());
            }
            if !known_kind(kind) {
                return Err(format!("unknown section kind '{kind}'"));
            }
            if !schema(kind).contains(&key.as_str()) {
                return Err(format!("[{kind}] has no key '{key}'"));
            }
            apply_to_kind(doc, kind, key, &ov.value)
        }
        [kind, name, key] => {
            if !schema(kind).contains(&key.as_str()) {
                return Err(format!("[{kind}] has no key '{key}'"));
            }
            let sec = doc
                .sections
                .iter_mut()
                .find(|s| s.kind == *kind && s.name.as_deref() == Some(name.as_str()))
                .ok_or_else(|| format!("no section [{kind} {name}]"))?;
            sec.set(key, &ov.value);
            Ok(())
        }
        _ => Err(format!("invalid override '{ov}'")),
    }
}

fn apply_to_kind(doc: &mut Document, kind: &str, key: &str, value: &str) -> Result<(), String> {
    if is_singleton(kind) {
        ensure_singleton(doc, kind).set(key, value);
        return Ok(());
    }
    let mut hit = false;
    for s in doc.sections.iter_mut().filter(|s| s.kind == kind) {
        s.set(key, value);
        hit = true;
    }
    if hit {
        Ok(())
    } else {
        Err(format!("no [{kind} ...] section to apply '{key}' to"))
    }
}

/// Typed reader over one section that collects errors instead of stopping.
struct Reader<'a> {
    sec: Option<&'a Section>,
    errs: &'a mut Vec<ValidationError>,
}

impl<'a> Reader<'a> {
    fn raw(&self, key: &str) -> Option<&'a Entry> {
        self.sec.and_then(|s| s.get(key))
    }

    fn line_of(&self, key: &str) -> Option<usize> {
        match self.raw(key) {
            Some(e) if e.line > 0 => Some(e.line),
            _ => self.sec.map(|s| s.line).filter(|&l| l > 0),
        }
    }

    fn fail(&mut self, key: &str, msg: String) {
        let line = self.line_of(key);
        let sec = self.sec.map(|s| match &s.name {
            Some(n) => format!("[{} {}]", s.kind, n),
            None => format!("[{}]", s.kind),
        });
        let message = match sec {
            Some(s) => format!("{s} {key}: {msg}"),
            None => format!("{key}: {msg}"),
        };
        self.errs.push(ValidationError { line, message });
    }

    fn get<T>(&mut self, key: &str, default: T, parse: impl Fn(&str) -> Result<T, String>) -> T {
        match self.raw(key) {
            None => default,
            Some(e) => match parse(&e.value) {
                Ok(v) => v,
                Err(msg) => {
                    self.fail(key, msg);
                    default
                }
            },
        }
    }

    fn required<T>(&mut self, key: &str, fallback: T, parse: impl Fn(&str) -> Result<T, String>) -> T {
        if self.raw(key).is_none() {
            self.fail(key, "required key is missing".into());
            return fallback;
        }
        self.get(key, fallback, parse)
    }
}

fn p_u64(s: &str) -> Result<u64, String> {
    s.parse().map_err(|_| format!("expected a non-negative integer, got '{s}'"))
}

fn p_u32(s: &str) -> Result<u32, String> {
    s.parse().map_err(|_| format!("expected a non-negative integer, got '{s}'"))
}

fn p_u8(s: &str) -> Result<u8, String> {
    s.parse().map_err(|_| format!("expected an integer in 0..=255, got '{s}'"))
}

fn p_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("expected a number, got '{s}'")),
    }
}

fn p_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got '{s}'")),
    }
}

fn p_str(s: &str) -> Result<String, String> {
    Ok(s.to_string())
}

fn p_name(s: &str) -> Result<String, String> {
    if s.is_empty() {
        Err("expected a name".into())
    } else {
        Ok(s.to_string())
    }
}

fn p_range(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once('-').ok_or_else(|| format!("expected 'lo-hi', got '{s}'"))?;
    Ok((p_u32(a.trim())?, p_u32(b.trim())?))
}

fn latency(r: &mut Reader, prefix: &str, p50: SimDuration, sigma: f64) -> LogNormalLatency {
    LogNormalLatency::new(r.get(&format!("{prefix}_p50"), p50, parse_duration), r.get(&format!("{prefix}_sigma"), sigma, p_f64))
}

/// Parses and validates; either a fully valid scenario or every error found.
pub fn parse_scenario(text: &str) -> Result<Scenario, Vec<ValidationError>> {
    let doc = parse_document(text)?;
    build_scenario(&doc)
}

pub fn build_scenario(doc: &Document) -> Result<Scenario, Vec<ValidationError>> {
    let mut errs: Vec<ValidationError> = Vec::new();
    let single = |kind: &str| doc.sections.iter().find(|s| s.kind == kind);
    let named = |kind: &'static str| doc.sections.iter().filter(move |s| s.kind == kind);

    let mut r = Reader { sec: single("run"), errs: &mut errs };
    let name = r.get("name", String::new(), p_str);
    let duration = r.get("duration", SimDuration::from_secs(60), parse_duration);
    let seed = r.get("seed", 1, p_u64);

    let mut producers = Vec::new();
    for s in named("producer") {
        let mut r = Reader { sec: Some(s), errs: &mut errs };
        producers.push(ProducerSpec {
            name: s.name.clone().unwrap_or_default(),
            rate: r.required("rate", 1, p_u64),
            message_size: r.get("message_size", DEFAULT_MESSAGE_SIZE, parse_bytes),
            keys: r.get("keys", 10_000, p_u32),
            key_prefix: r.get("key_prefix", "acct-".to_string(), p_str),
            arrival: r.get("arrival", Arrival::Fixed, |v| v.parse()),
            jitter: r.get("jitter", 0.0, p_f64),
        });
    }

    let mut r = Reader { sec: single("ensemble"), errs: &mut errs };
    let ensemble = EnsembleConfig { e: r.get("e", 3, p_u32), qw: r.get("qw", 2, p_u32), qa: r.get("qa", 2, p_u32) };

    let mut r = Reader { sec: single("topic"), errs: &mut errs };
    let topic = TopicSpec {
        partitions: r.get("partitions", 1, p_u32),
        routing: r.get("routing", RoutingMode::Hash, |v| v.parse()),
        consumers: r.get("consumers", 0, p_u32),
    };

    let mut r = Reader { sec: single("journal"), errs: &mut errs };
    let journal = JournalConfig {
        group_wait: r.get("group_wait", SimDuration::from_millis(1), parse_duration),
        group_max_entries: r.get("group_max_entries", DEFAULT_GROUP_MAX_ENTRIES as u64, p_u64) as usize,
    };

    let mut r = Reader { sec: single("write_cache"), errs: &mut errs };
    let flush_interval = r.get("flush_interval", SimDuration::from_secs(60), parse_duration);

    let mut r = Reader { sec: single("processing"), errs: &mut errs };
    let processing = ProcessingSpec {
        broker: latency(&mut r, "broker", SimDuration::from_millis(1), 0.25),
        bookie: latency(&mut r, "bookie", SimDuration::from_millis(1), 0.25),
        dispatch: latency(&mut r, "dispatch", SimDuration::ZERO, 0.25),
    };

    let mut gc = Vec::new();
    for s in named("gc") {
        let mut r = Reader { sec: Some(s), errs: &mut errs };
        let kind = r.required("kind", GcKind::None, |v| v.parse());
        let heap_gb = r.get("heap_gb", 32.0, p_f64);
        let base = match kind {
            GcKind::G1Like => GcModel::g1_like(heap_gb),
            GcKind::ZgcLike => GcModel::zgc_like(heap_gb),
            GcKind::None => GcModel { heap_gb, ..GcModel::none() },
        };
        let model = GcModel {
            pause_p50: r.get("pause_p50", base.pause_p50, parse_duration),
            pause_max: r.get("pause_max", base.pause_max, parse_duration),
            mean_interval: r.get("mean_interval", base.mean_interval, parse_duration),
            tail_fraction: r.get("tail_fraction", base.tail_fraction, p_f64),
            body_sigma: r.get("body_sigma", base.body_sigma, p_f64),
            ..base
        };
        gc.push(GcSpec { name: s.name.clone().unwrap_or_default(), model });
    }

    let mut layers = Vec::new();
    for s in named("layer") {
        let mut r = Reader { sec: Some(s), errs: &mut errs };
        let base = r.get("tunables", OsTunables::UNTUNED, |v| match v {
            "untuned" => Ok(OsTunables::UNTUNED),
            "tuned" => Ok(OsTunables::TUNED),
            other => Err(format!("unknown tunables preset '{other}' (tuned, untuned)")),
        });
        let tunables = OsTunables {
            dirty_ratio: r.get("dirty_ratio", base.dirty_ratio, p_u8),
            dirty_background_ratio: r.get("dirty_background_ratio", base.dirty_background_ratio, p_u8),
            dirty_expire_centisecs: r.get("dirty_expire_centisecs", base.dirty_expire_centisecs, p_u32),
            dirty_writeback_centisecs: r.get("dirty_writeback_centisecs", base.dirty_writeback_centisecs, p_u32),
        };
        layers.push(LayerSpec {
            name: s.name.clone().unwrap_or_default(),
            total_ram: r.get("total_ram", 64 << 30, parse_bytes),
            drain_rate: r.get("drain_rate", 1 << 30, parse_byte_rate),
            degraded_lo: r.get("degraded_lo", SimDuration::from_millis(15), parse_duration),
            degraded_hi: r.get("degraded_hi", SimDuration::from_millis(22), parse_duration),
            tunables,
            background_write_rate: r.get("background_write_rate", 0, parse_byte_rate),
        });
    }

    let mut devices = Vec::new();
    for s in named("device") {
        let mut r = Reader { sec: Some(s), errs: &mut errs };
        let tier: DeviceTier = r.required("tier", DeviceTier::Custom, |v| v.parse());
        devices.push(DeviceSpec {
            name: s.name.clone().unwrap_or_default(),
            tier,
            fsync_p50: match tier.preset_p50() {
                Some(p50) => r.get("fsync_p50", p50, parse_duration),
                None => r.required("fsync_p50", SimDuration::ZERO, parse_duration),
            },
            fsync_sigma: r.get("fsync_sigma", DEFAULT_FSYNC_SIGMA, p_f64),
            layer: r.required("layer", String::new(), p_name),
        });
    }

    let mut nics = Vec::new();
    for s in named("nic") {
        let mut r = Reader { sec: Some(s), errs: &mut errs };
        nics.push(NicSpec {
            name: s.name.clone().unwrap_or_default(),
            model: NicModel {
                bandwidth: r.required("bandwidth", 1, parse_bandwidth),
                base_rtt: r.get("base_rtt", SimDuration::ZERO, parse_duration),
            },
        });
    }

    let mut brokers = Vec::new();
    for s in named("broker") {
        let mut r = Reader { sec: Some(s), errs: &mut errs };
        brokers.push(BrokerSpec {
            name: s.name.clone().unwrap_or_default(),
            cluster: r.get("cluster", DEFAULT_CLUSTER.to_string(), p_name),
            nic: r.required("nic", String::new(), p_name),
            gc: r.get("gc", "none".to_string(), p_name),
        });
    }

    let mut bookies = Vec::new();
    for s in named("bookie") {
        let mut r = Reader { sec: Some(s), errs: &mut errs };
        let journal = r.required("journal", String::new(), p_name);
        bookies.push(BookieSpec {
            name: s.name.clone().unwrap_or_default(),
            cluster: r.get("cluster", DEFAULT_CLUSTER.to_string(), p_name),
            ledger: r.get("ledger", journal.clone(), p_name),
            journal,
            gc: r.get("gc", "none".to_string(), p_name),
        });
    }

    let mut federation = Vec::new();
    if let Some(s) = single("federation") {
        for e in &s.entries {
            match p_range(&e.value) {
                Ok((lo, hi)) => federation.push(PartitionRange { cluster: e.key.clone(), lo, hi }),
                Err(msg) => errs.push(ValidationError { line: (e.line > 0).then_some(e.line), message: format!("[federation] {}: {msg}", e.key) }),
            }
        }
    }

    let mut r = Reader { sec: single("output"), errs: &mut errs };
    let trace = r.get("trace", false, p_bool);

    let scenario = Scenario {
        name,
        duration,
        seed,
        producers,
        ensemble,
        topic,
        journal,
        flush_interval,
        processing,
        gc,
        layers,
        devices,
        nics,
        brokers,
        bookies,
        federation,
        trace,
    };

    for (loc, msg) in scenario.validate() {
        errs.push(locate(doc, &loc, msg));
    }
    if errs.is_empty() {
        Ok(scenario)
    } else {
        errs.sort_by_key(|e| e.line.unwrap_or(usize::MAX));
        Err(errs)
    }
}

fn locate(doc: &Document, loc: &Loc, msg: String) -> ValidationError {
    let (kind, name, key) = match loc {
        Loc::Section { kind, name } => (*kind, name.as_deref(), None),
        Loc::Key { kind, name, key } => (*kind, name.as_deref(), Some(*key)),
    };
    let sec = doc.sections.iter().find(|s| s.kind == kind && (name.is_none() || s.name.as_deref() == name));
    let line = sec
        .and_then(|s| key.and_then(|k| s.get(k)).map(|e| e.line).filter(|&l| l > 0).or(Some(s.line)))
        .filter(|&l| l > 0);
    let label = match (name, key) {
        (Some(n), Some(k)) => format!("[{kind} {n}] {k}: "),
        (Some(n), None) => format!("[{kind} {n}]: "),
        (None, Some(k)) => format!("[{kind}] {k}: "),
        (None, None) => format!("[{kind}]: "),
    };
    ValidationError { line, message: format!("{label}{msg}") }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[run]
duration = 1s

[producer p]
rate = 10

[ensemble]
e = 1
qw = 1
qa = 1

[layer host]

[device d]
tier = new_nvme
layer = host

[nic n]
bandwidth = 10Gbps

[broker b]
nic = n

[bookie k]
journal = d
";

    #[test]
    fn minimal_file_parses() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.bookies[0].ledger, "d");
        assert_eq!(s.devices[0].fsync_p50, SimDuration::from_micros(20));
        assert_eq!(s.producers[0].message_size, 700);
    }

    #[test]
    fn custom_device_needs_an_explicit_median() {
        let text = MINIMAL.replace("tier = new_nvme", "tier = custom");
        let errs = parse_scenario(&text).unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("fsync_p50")), "{errs:?}");
        let zero = MINIMAL.replace("tier = new_nvme", "tier = custom\nfsync_p50 = 0ms");
        assert!(parse_scenario(&zero).unwrap().devices[0].fsync_p50.is_zero());
    }

    #[test]
    fn quorum_violation_is_reported() {
        let text = MINIMAL.replace("e = 1\nqw = 1\nqa = 1", "e = 3\nqw = 2\nqa = 3");
        let errs = parse_scenario(&text).unwrap_err();
        assert!(errs.iter().any(|e| e.message.contains("e >= qw >= qa")), "{errs:?}");
    }

    #[test]
    fn all_errors_are_collected_with_lines() {
        let text = "[run]\nduration = 5\nbogus = 1\n[nic n]\nbandwidth = fast\n[device d]\ntier = new_nvme\nlayer = nowhere\n";
        let errs = parse_scenario(text).unwrap_err();
        let lines: Vec<Option<usize>> = errs.iter().map(|e| e.line).collect();
        assert!(lines.contains(&Some(3)), "{errs:?}");
        let doc_errs = parse_document(text).unwrap_err();
        assert_eq!(doc_errs.len(), 1);
        let no_bogus = text.replace("bogus = 1\n", "");
        let errs = parse_scenario(&no_bogus).unwrap_err();
        assert!(errs.iter().any(|e| e.line == Some(2)), "{errs:?}");
        assert!(errs.iter().any(|e| e.line == Some(4)), "{errs:?}");
    }

    #[test]
    fn unresolved_reference_names_its_line() {
        let text = MINIMAL.replace("layer = host", "layer = elsewhere");
        let errs = parse_scenario(&text).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].line, Some(16));
        assert!(errs[0].message.contains("elsewhere"));
    }

    #[test]
    fn syntax_errors() {
        assert!(parse_document("duration = 1s").is_err());
        assert!(parse_document("[run\n").is_err());
        assert!(parse_document("[run x]\n").is_err());
        assert!(parse_document("[broker]\n").is_err());
        assert!(parse_document("[run]\n[run]\n").is_err());
        assert!(parse_document("[run]\nduration 1s\n").is_err());
        assert!(parse_document("[warp]\n").is_err());
        assert!(parse_document("# only a comment\n\n").is_ok());
    }

    #[test]
    fn overrides() {
        let mut doc = parse_document(MINIMAL).unwrap();
        apply_override(&mut doc, &Override::parse("flush_interval=15s").unwrap()).unwrap();
        apply_override(&mut doc, &Override::parse("layer.dirty_ratio=2").unwrap()).unwrap();
        apply_override(&mut doc, &Override::parse("layer.host.dirty_background_ratio=1").unwrap()).unwrap();
        apply_override(&mut doc, &Override::parse("nic.bandwidth=100Mbps").unwrap()).unwrap();
        let s = build_scenario(&doc).unwrap();
        assert_eq!(s.flush_interval, SimDuration::from_secs(15));
        assert_eq!(s.layers[0].tunables.dirty_ratio, 2);
        assert_eq!(s.layers[0].tunables.dirty_background_ratio, 1);
        assert_eq!(s.nics[0].model.bandwidth, 100_000_000);
        // `gc` exists on both brokers and bookies
        assert!(apply_override(&mut doc, &Override::parse("gc=none").unwrap()).is_err());
        assert!(apply_override(&mut doc, &Override::parse("nope=1").unwrap()).is_err());
        assert!(apply_override(&mut doc, &Override::parse("layer.ghost.dirty_ratio=1").unwrap()).is_err());
    }
}
