#![allow(dead_code)]

use std::collections::HashMap;

use pulse_sim::audit::{audit_str, Check};
use pulse_sim::metrics::SimReport;
use pulse_sim::scenario::{parse_scenario, Scenario};
use pulse_sim::sim;

/// Knobs of the small three-host topology used across integration tests.
#[derive(Clone, Debug)]
pub struct Small {
    pub rate: u64,
    pub millis: u64,
    pub seed: u64,
    pub qw: u32,
    pub qa: u32,
    pub consumers: u32,
    pub broker_gc: &'static str,
    pub bookie_gc: &'static str,
    pub flush: &'static str,
    pub dirty_ratio: u8,
    pub bandwidth: &'static str,
    /// Journals on their own block layer, away from ledger writeback.
    pub split_journal: bool,
}

impl Default for Small {
    fn default() -> Self {
        Small {
            rate: 2_000,
            millis: 3_000,
            seed: 7,
            qw: 2,
            qa: 2,
            consumers: 3,
            broker_gc: "none",
            bookie_gc: "none",
            flush: "1s",
            dirty_ratio: 40,
            bandwidth: "1Gbps",
            split_journal: false,
        }
    }
}

impl Small {
    pub fn text(&self) -> String {
        let mut s = format!(
            "[run]\nname = small\nduration = {}ms\nseed = {}\n\n[producer p]\nrate = {}\nkeys = 50\n\n\
             [ensemble]\ne = 3\nqw = {}\nqa = {}\n\n[topic]\npartitions = 8\nconsumers = {}\n\n\
             [write_cache]\nflush_interval = {}\n\n[processing]\nbroker_p50 = 0.3ms\nbookie_p50 = 0.4ms\ndispatch_p50 = 2ms\n\n\
             [gc g1]\nkind = g1_like\n\n[gc z]\nkind = zgc_like\n\n[nic n]\nbandwidth = {}\nbase_rtt = 100us\n",
            self.millis, self.seed, self.rate, self.qw, self.qa, self.consumers, self.flush, self.bandwidth
        );
        let bg = self.dirty_ratio.min(10);
        for h in 0..3 {
            let jl = if self.split_journal {
                s += &format!("\n[layer jh{h}]\ntotal_ram = 1GiB\ndrain_rate = 8MiB/s\n");
                format!("jh{h}")
            } else {
                format!("h{h}")
            };
            s += &format!(
                "\n[layer h{h}]\ntotal_ram = 1GiB\ndrain_rate = 8MiB/s\ndirty_ratio = {}\ndirty_background_ratio = {bg}\n\
                 \n[device j{h}]\ntier = new_nvme\nlayer = {jl}\n\n[device l{h}]\ntier = new_nvme\nlayer = h{h}\n\
                 \n[broker b{h}]\nnic = n\ngc = {}\n\n[bookie k{h}]\njournal = j{h}\nledger = l{h}\ngc = {}\n",
                self.dirty_ratio, self.broker_gc, self.bookie_gc
            );
        }
        s
    }

    pub fn scenario(&self) -> Scenario {
        parse_scenario(&self.text()).unwrap_or_else(|e| panic!("{e:?}\n{}", self.text()))
    }

    pub fn run(&self) -> SimReport {
        sim::run(&self.scenario()).expect("run")
    }

    pub fn trace(&self) -> (SimReport, String) {
        let mut buf = Vec::new();
        let r = sim::run_traced(&self.scenario(), Some(&mut buf)).expect("run");
        (r, String::from_utf8(buf).expect("utf8"))
    }
}

/// Per-message timings pulled from an event log.
#[derive(Clone, Copy, Debug, Default)]
pub struct MsgTimes {
    pub published: u64,
    pub latency: Option<u64>,
    pub ensemble: Option<u64>,
    pub delivered: Option<u64>,
}

pub fn message_times(log: &str) -> HashMap<u64, MsgTimes> {
    let mut out: HashMap<u64, MsgTimes> = HashMap::new();
    for line in log.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        let t: u64 = f[0].parse().unwrap();
        match f[1] {
            "publish" => {
                out.insert(f[2].parse().unwrap(), MsgTimes { published: t, ..MsgTimes::default() });
            }
            "publish_ack" => {
                let m = out.get_mut(&f[2].parse().unwrap()).unwrap();
                m.latency = Some(f[3].parse().unwrap());
                m.ensemble = Some(f[4].parse().unwrap());
            }
            "deliver" => {
                out.get_mut(&f[2].parse().unwrap()).unwrap().delivered = Some(t);
            }
            _ => {}
        }
    }
    out
}

fn fields(line: &str) -> Vec<&str> {
    line.split('\t').collect()
}

fn find(lines: &[String], pred: impl Fn(&[&str]) -> bool) -> usize {
    lines.iter().position(|l| pred(&fields(l))).expect("record present in log")
}

fn set_field(line: &str, idx: usize, value: &str) -> String {
    let mut f: Vec<String> = fields(line).into_iter().map(str::to_string).collect();
    f[idx] = value.to_string();
    f.join("\t")
}

/// Whether the log holds an fsync issued inside a contention window.
pub fn has_contended_fsync(log: &str) -> bool {
    log.lines().any(|l| {
        let f = fields(l);
        f[1] == "fsync_start" && f[5] == "1"
    })
}

/// A broken copy of a clean log, and the check that must reject it.
pub struct NegativeFixture {
    pub name: &'static str,
    pub check: Check,
    pub log: String,
}

/// One corruption per audited invariant. Each keeps records in time order
/// so the failure it provokes is specific to its check.
pub fn negative_fixtures(clean: &str) -> Vec<NegativeFixture> {
    let base: Vec<String> = clean.lines().map(str::to_string).collect();
    let mut out = Vec::new();
    let mut push = |name, check, l: Vec<String>| out.push(NegativeFixture { name, check, log: l.join("\n") + "\n" });

    // bookie ack written before the fsync that covers it completes
    let mut l = base.clone();
    let ack = find(&l, |f| f[1] == "bookie_ack");
    let (bookie, fsync) = {
        let f = fields(&l[ack]);
        (f[2].to_string(), f[4].to_string())
    };
    let end = find(&l, |f| f[1] == "fsync_end" && f[2] == bookie && f[3] == fsync);
    let rec = l.remove(ack);
    l.insert(end, rec);
    push("ack-before-fsync", Check::AckAfterFsync, l);

    // an fsync that never ends, so the next one overlaps it
    let mut l = base.clone();
    l.remove(find(&l, |f| f[1] == "fsync_end"));
    push("overlapping-fsync", Check::SerialJournal, l);

    // a transmission claiming a thousand times its bits
    let mut l = base.clone();
    let tx = find(&l, |f| f[1] == "nic_tx");
    let bits: u64 = fields(&l[tx])[4].parse().unwrap();
    l[tx] = set_field(&l[tx], 4, &(bits * 1_000).to_string());
    push("link-overload", Check::LinkCapacity, l);

    // two deliveries of one key with their sequence numbers swapped
    let mut l = base.clone();
    let first = find(&l, |f| f[1] == "deliver");
    let key = fields(&l[first])[3].to_string();
    let second = first + 1 + find(&l[first + 1..], |f| f[1] == "deliver" && f[3] == key);
    let (a, b) = (fields(&l[first])[4].to_string(), fields(&l[second])[4].to_string());
    l[first] = set_field(&l[first], 4, &b);
    l[second] = set_field(&l[second], 4, &a);
    push("reordered-delivery", Check::KeyOrder, l);

    // publish latency one nanosecond off the quorum ack
    let mut l = base.clone();
    let ack = find(&l, |f| f[1] == "publish_ack");
    let lat: u64 = fields(&l[ack])[3].parse().unwrap();
    l[ack] = set_field(&l[ack], 3, &(lat + 1).to_string());
    push("wrong-quorum", Check::Quorum, l);

    // a contended fsync drawn well below the degraded band
    let mut l = base.clone();
    let start = find(&l, |f| f[1] == "fsync_start" && f[5] == "1");
    l[start] = set_field(&l[start], 4, "1000");
    push("out-of-band-fsync", Check::ContentionBand, l);

    // two records at different times swapped
    let mut l = base;
    let i = find(&l, |f| f[1] == "publish" && f[0] != "0");
    let t = fields(&l[i])[0].to_string();
    let j = i + 1 + find(&l[i + 1..], |f| f[0] != t);
    l.swap(i, j);
    push("time-travel", Check::TimeOrder, l);

    out
}

/// Audits `fixture` and reports whether its check, and only a
/// non-time-order check, rejected it.
pub fn fixture_caught(fixture: &NegativeFixture) -> Result<(), String> {
    let report = audit_str(&fixture.log).map_err(|e| format!("{}: {e}", fixture.name))?;
    if report.verdict(fixture.check).passed() {
        return Err(format!("{}: {} not caught\n{report}", fixture.name, fixture.check));
    }
    if fixture.check != Check::TimeOrder && !report.verdict(Check::TimeOrder).passed() {
        return Err(format!("{}: time order broken by the mutation\n{report}", fixture.name));
    }
    Ok(())
}
