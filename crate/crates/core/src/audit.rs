//! Replays an event log and re-checks the run's structural invariants from
//! the records alone. Nothing here calls into the simulator.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Check {
    TimeOrder,
    AckAfterFsync,
    Quorum,
    SerialJournal,
    LinkCapacity,
    KeyOrder,
    ContentionBand,
}

pub const CHECKS: [Check; 7] =
    [Check::TimeOrder, Check::AckAfterFsync, Check::Quorum, Check::SerialJournal, Check::LinkCapacity, Check::KeyOrder, Check::ContentionBand];

impl Check {
    pub fn as_str(self) -> &'static str {
        match self {
            Check::TimeOrder => "time-order",
            Check::AckAfterFsync => "ack-after-fsync",
            Check::Quorum => "quorum",
            Check::SerialJournal => "serial-journal",
            Check::LinkCapacity => "link-capacity",
            Check::KeyOrder => "key-order",
            Check::ContentionBand => "contention-band",
        }
    }

    fn index(self) -> usize {
        CHECKS.iter().position(|c| *c == self).expect("listed")
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Counterexample {
    /// 1-based line of the offending record; 0 for end-of-log checks.
    pub line: usize,
    pub record: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub check: Check,
    /// Records this check examined.
    pub checked: u64,
    pub counterexample: Option<Counterexample>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.counterexample.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditReport {
    pub records: u64,
    pub verdicts: Vec<Verdict>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(Verdict::passed)
    }

    pub fn verdict(&self, check: Check) -> &Verdict {
        &self.verdicts[check.index()]
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} records", self.records)?;
        for v in &self.verdicts {
            match &v.counterexample {
                None => writeln!(f, "PASS {:<16} ({} checked)", v.check.as_str(), v.checked)?,
                Some(c) => writeln!(f, "FAIL {:<16} line {}: {} [{}]", v.check.as_str(), c.line, c.reason, c.record)?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct Link {
    bandwidth: u64,
    free_at: u64,
    /// Bits on the wire per whole second of virtual time.
    per_second: HashMap<u64, f64>,
}

struct Layer {
    lo: u64,
    hi: u64,
    windows: Vec<(u64, u64)>,
}

#[derive(Default)]
struct Journal {
    layer: String,
    next_id: u64,
    in_flight: Option<(u64, u64, u64)>,
    last_done: Option<(u64, u64)>,
    enqueued: HashMap<u64, u64>,
}

struct Msg {
    published: u64,
    sent: Option<u64>,
    acks: Vec<u64>,
}

/// Streaming checker; feed it one record per line.
#[derive(Default)]
pub struct Auditor {
    line: usize,
    records: u64,
    last_time: u64,
    quorum: Option<(usize, usize)>,
    links: HashMap<String, Link>,
    layers: HashMap<String, Layer>,
    journals: HashMap<String, Journal>,
    msgs: HashMap<u64, Msg>,
    acked: Vec<u64>,
    key_seq: HashMap<u64, u64>,
    checked: [u64; 7],
    found: [Option<Counterexample>; 7],
}

fn num(fields: &[&str], i: usize, line: usize) -> Result<u64, AuditError> {
    fields
        .get(i)
        .ok_or_else(|| AuditError::Parse { line, message: format!("missing field {i}") })?
        .parse()
        .map_err(|_| AuditError::Parse { line, message: format!("field {i} ('{}') is not an integer", fields[i]) })
}

fn arity(kind: &str) -> Option<usize> {
    Some(match kind {
        "config" => 3,
        "nic" => 2,
        "layer" => 3,
        "bookie" => 3,
        "publish" => 6,
        "send" => 2,
        "nic_tx" => 5,
        "enqueue" => 2,
        "fsync_start" => 4,
        "fsync_end" => 2,
        "bookie_ack" => 3,
        "broker_ack" => 3,
        "publish_ack" => 3,
        "sync_tick" => 2,
        "contention" => 4,
        "gc_pause" => 2,
        "deliver" => 4,
        _ => return None,
    })
}

impl Auditor {
    pub fn new() -> Self {
        Self::default()
    }

    fn fail(&mut self, check: Check, raw: &str, reason: String) {
        let slot = &mut self.found[check.index()];
        if slot.is_none() {
            *slot = Some(Counterexample { line: self.line, record: raw.to_string(), reason });
        }
    }

    fn tick(&mut self, check: Check) {
        self.checked[check.index()] += 1;
    }

    fn is_acked(&self, msg: u64) -> bool {
        self.acked.get((msg / 64) as usize).is_some_and(|w| w & (1 << (msg % 64)) != 0)
    }

    fn mark_acked(&mut self, msg: u64) {
        let i = (msg / 64) as usize;
        if self.acked.len() <= i {
            self.acked.resize(i + 1, 0);
        }
        self.acked[i] |= 1 << (msg % 64);
    }

    pub fn feed(&mut self, raw: &str) -> Result<(), AuditError> {
        self.line += 1;
        let line = self.line;
        if raw.is_empty() {
            return Ok(());
        }
        let f: Vec<&str> = raw.split('\t').collect();
        if f.len() < 2 {
            return Err(AuditError::Parse { line, message: "expected 'time<TAB>kind ...'".into() });
        }
        let t = num(&f, 0, line)?;
        let kind = f[1];
        let want = arity(kind).ok_or_else(|| AuditError::Parse { line, message: format!("unknown record kind '{kind}'") })?;
        if f.len() != want + 2 {
            return Err(AuditError::Parse { line, message: format!("'{kind}' takes {want} fields, found {}", f.len() - 2) });
        }
        self.records += 1;
        self.tick(Check::TimeOrder);
        if t < self.last_time {
            self.fail(Check::TimeOrder, raw, format!("time {t} precedes {}", self.last_time));
        }
        self.last_time = self.last_time.max(t);

        match kind {
            "config" => {
                let qw = num(&f, 3, line)? as usize;
                let qa = num(&f, 4, line)? as usize;
                self.quorum = Some((qw, qa));
            }
            "nic" => {
                let bandwidth = num(&f, 3, line)?;
                if bandwidth == 0 {
                    return Err(AuditError::Parse { line, message: "zero bandwidth".into() });
                }
                self.links.insert(f[2].to_string(), Link { bandwidth, free_at: 0, per_second: HashMap::new() });
            }
            "layer" => {
                let (lo, hi) = (num(&f, 3, line)?, num(&f, 4, line)?);
                self.layers.insert(f[2].to_string(), Layer { lo, hi, windows: Vec::new() });
            }
            "bookie" => {
                self.journals.insert(f[2].to_string(), Journal { layer: f[3].to_string(), ..Journal::default() });
            }
            "publish" => {
                let msg = num(&f, 2, line)?;
                num(&f, 4, line)?;
                num(&f, 5, line)?;
                self.msgs.insert(msg, Msg { published: t, sent: None, acks: Vec::new() });
            }
            "send" => {
                let msg = num(&f, 2, line)?;
                match self.msgs.get_mut(&msg) {
                    Some(m) => m.sent = Some(t),
                    None => self.fail(Check::Quorum, raw, format!("message {msg} sent before it was published")),
                }
            }
            "nic_tx" => self.on_nic_tx(raw, &f, t, line)?,
            "enqueue" => {
                let msg = num(&f, 3, line)?;
                match self.journals.get_mut(f[2]) {
                    Some(j) => {
                        j.enqueued.insert(msg, t);
                    }
                    None => self.fail(Check::AckAfterFsync, raw, format!("unknown bookie '{}'", f[2])),
                }
            }
            "fsync_start" => self.on_fsync_start(raw, &f, t, line)?,
            "fsync_end" => {
                self.tick(Check::SerialJournal);
                let id = num(&f, 3, line)?;
                let Some(j) = self.journals.get_mut(f[2]) else {
                    self.fail(Check::SerialJournal, raw, format!("unknown bookie '{}'", f[2]));
                    return Ok(());
                };
                match j.in_flight.take() {
                    Some((fid, start, dur)) if fid == id => {
                        j.last_done = Some((id, start));
                        if t < start + dur {
                            self.fail(Check::SerialJournal, raw, format!("fsync {id} ended at {t}, before {}", start + dur));
                        }
                    }
                    other => {
                        j.in_flight = other;
                        self.fail(Check::SerialJournal, raw, format!("fsync {id} ended but was not in flight"));
                    }
                }
            }
            "bookie_ack" => {
                self.tick(Check::AckAfterFsync);
                let msg = num(&f, 3, line)?;
                let fid = num(&f, 4, line)?;
                let Some(j) = self.journals.get_mut(f[2]) else {
                    self.fail(Check::AckAfterFsync, raw, format!("unknown bookie '{}'", f[2]));
                    return Ok(());
                };
                let enq = j.enqueued.remove(&msg);
                let reason = match (j.last_done, enq) {
                    (Some((id, start)), Some(e)) if id == fid && e <= start => None,
                    (Some((id, _)), Some(_)) if id == fid => Some(format!("message {msg} was enqueued after fsync {fid} started")),
                    (_, None) => Some(format!("message {msg} acked without being enqueued")),
                    _ => Some(format!("message {msg} acked before fsync {fid} completed")),
                };
                if let Some(r) = reason {
                    self.fail(Check::AckAfterFsync, raw, r);
                }
            }
            "broker_ack" => {
                let msg = num(&f, 3, line)?;
                if let Some(m) = self.msgs.get_mut(&msg) {
                    m.acks.push(t);
                    let done = self.quorum.is_some_and(|(qw, _)| m.acks.len() >= qw);
                    if m.sent.is_none() {
                        self.fail(Check::Quorum, raw, format!("message {msg} acked before it was sent"));
                    }
                    if done && self.is_acked(msg) {
                        self.msgs.remove(&msg);
                    }
                } else if !self.is_acked(msg) {
                    self.fail(Check::Quorum, raw, format!("ack for unknown message {msg}"));
                }
            }
            "publish_ack" => self.on_publish_ack(raw, &f, t, line)?,
            "contention" => {
                let (start, end) = (num(&f, 3, line)?, num(&f, 4, line)?);
                num(&f, 5, line)?;
                match self.layers.get_mut(f[2]) {
                    Some(l) => l.windows.push((start, end)),
                    None => self.fail(Check::ContentionBand, raw, format!("unknown layer '{}'", f[2])),
                }
            }
            "deliver" => {
                self.tick(Check::KeyOrder);
                let msg = num(&f, 2, line)?;
                let key = num(&f, 3, line)?;
                let seq = num(&f, 4, line)?;
                num(&f, 5, line)?;
                if !self.is_acked(msg) {
                    self.fail(Check::KeyOrder, raw, format!("message {msg} delivered before its publish was acknowledged"));
                }
                if let Some(&prev) = self.key_seq.get(&key) {
                    if seq <= prev {
                        self.fail(Check::KeyOrder, raw, format!("key {key}: sequence {seq} delivered after {prev}"));
                    }
                }
                self.key_seq.insert(key, seq);
            }
            _ => {
                // sync_tick, gc_pause: informational
                num(&f, 3, line)?;
            }
        }
        Ok(())
    }

    fn on_nic_tx(&mut self, raw: &str, f: &[&str], t: u64, line: usize) -> Result<(), AuditError> {
        self.tick(Check::LinkCapacity);
        let bits = num(f, 4, line)?;
        let start = num(f, 5, line)?;
        let depart = num(f, 6, line)?;
        let Some(link) = self.links.get_mut(f[2]) else {
            self.fail(Check::LinkCapacity, raw, format!("unknown link '{}'", f[2]));
            return Ok(());
        };
        let expected = (bits as u128 * 1_000_000_000).div_ceil(link.bandwidth as u128) as u64;
        let mut reason = None;
        if start < t {
            reason = Some(format!("transmission starts at {start}, before it was issued at {t}"));
        } else if start < link.free_at {
            reason = Some(format!("transmission starts at {start} while the link is busy until {}", link.free_at));
        } else if depart < start || depart - start != expected {
            reason = Some(format!("{bits} bits took {} ns, expected {expected} ns", depart.saturating_sub(start)));
        }
        link.free_at = link.free_at.max(depart);
        // spread the bits over the seconds the transmission spans
        let span = depart.saturating_sub(start).max(1) as f64;
        let mut s = start / 1_000_000_000;
        while s * 1_000_000_000 < depart.max(start + 1) {
            let lo = start.max(s * 1_000_000_000);
            let hi = depart.max(start + 1).min((s + 1) * 1_000_000_000);
            *link.per_second.entry(s).or_default() += bits as f64 * (hi - lo) as f64 / span;
            s += 1;
        }
        if let Some(r) = reason {
            self.fail(Check::LinkCapacity, raw, r);
        }
        Ok(())
    }

    fn on_fsync_start(&mut self, raw: &str, f: &[&str], t: u64, line: usize) -> Result<(), AuditError> {
        self.tick(Check::SerialJournal);
        let id = num(f, 3, line)?;
        let dur = num(f, 4, line)?;
        let contended = num(f, 5, line)? == 1;
        let Some(j) = self.journals.get_mut(f[2]) else {
            self.fail(Check::SerialJournal, raw, format!("unknown bookie '{}'", f[2]));
            return Ok(());
        };
        let mut serial = None;
        if let Some((prev, _, _)) = j.in_flight {
            serial = Some(format!("fsync {id} started while fsync {prev} is in flight"));
        } else if id != j.next_id {
            serial = Some(format!("fsync id {id}, expected {}", j.next_id));
        }
        j.in_flight = Some((id, t, dur));
        j.next_id = id + 1;
        let layer_name = j.layer.clone();
        if let Some(r) = serial {
            self.fail(Check::SerialJournal, raw, r);
        }
        let band = match self.layers.get(&layer_name) {
            None => Some(format!("unknown layer '{layer_name}'")),
            Some(l) => {
                let inside = l.windows.iter().any(|&(s, e)| s <= t && t < e);
                if inside {
                    self.checked[Check::ContentionBand.index()] += 1;
                    if !contended {
                        Some(format!("fsync {id} starts inside a contention window but was not degraded"))
                    } else if dur < l.lo || dur > l.hi {
                        Some(format!("contended fsync took {dur} ns, outside [{}, {}]", l.lo, l.hi))
                    } else {
                        None
                    }
                } else if contended {
                    Some(format!("fsync {id} marked contended outside every window"))
                } else {
                    None
                }
            }
        };
        if let Some(r) = band {
            self.fail(Check::ContentionBand, raw, r);
        }
        Ok(())
    }

    fn on_publish_ack(&mut self, raw: &str, f: &[&str], t: u64, line: usize) -> Result<(), AuditError> {
        self.tick(Check::Quorum);
        let msg = num(f, 2, line)?;
        let latency = num(f, 3, line)?;
        let ensemble = num(f, 4, line)?;
        let Some((qw, qa)) = self.quorum else {
            self.fail(Check::Quorum, raw, "no config record before the first acknowledgement".into());
            return Ok(());
        };
        if self.is_acked(msg) {
            self.fail(Check::Quorum, raw, format!("message {msg} acknowledged twice"));
            return Ok(());
        }
        self.mark_acked(msg);
        let Some(m) = self.msgs.get(&msg) else {
            self.fail(Check::Quorum, raw, format!("acknowledgement of unknown message {msg}"));
            return Ok(());
        };
        let sent = m.sent.unwrap_or(m.published);
        let mut rel: Vec<u64> = m.acks.iter().map(|a| a.saturating_sub(sent)).collect();
        rel.sort_unstable();
        let reason = if m.acks.len() != qa {
            Some(format!("acknowledged after {} bookie acks, quorum is {qa}", m.acks.len()))
        } else if m.acks[qa - 1] != t {
            Some(format!("acknowledged at {t}, the quorum ack came at {}", m.acks[qa - 1]))
        } else if latency != t - m.published {
            Some(format!("latency {latency} != {}", t - m.published))
        } else if ensemble != rel[qa - 1] {
            Some(format!("ensemble latency {ensemble} is not the order statistic {}", rel[qa - 1]))
        } else {
            None
        };
        if m.acks.len() >= qw {
            self.msgs.remove(&msg);
        }
        if let Some(r) = reason {
            self.fail(Check::Quorum, raw, r);
        }
        Ok(())
    }

    pub fn finish(mut self) -> AuditReport {
        let mut over: Option<(String, u64, f64, u64)> = None;
        for (name, link) in &self.links {
            let limit = link.bandwidth as f64 * (1.0 + 1e-9) + 1.0;
            let mut seconds: Vec<(&u64, &f64)> = link.per_second.iter().collect();
            seconds.sort_by_key(|(s, _)| **s);
            self.checked[Check::LinkCapacity.index()] += seconds.len() as u64;
            if let Some((s, bits)) = seconds.into_iter().find(|(_, b)| **b > limit) {
                if over.as_ref().is_none_or(|o| *s < o.1) {
                    over = Some((name.clone(), *s, *bits, link.bandwidth));
                }
            }
        }
        if let Some((name, s, bits, bw)) = over {
            self.line = 0;
            self.fail(Check::LinkCapacity, &format!("link {name}"), format!("second {s} carried {bits:.0} bits, more than {bw}"));
        }
        let verdicts = CHECKS
            .iter()
            .map(|&c| Verdict { check: c, checked: self.checked[c.index()], counterexample: self.found[c.index()].take() })
            .collect();
        AuditReport { records: self.records, verdicts }
    }
}

pub fn audit_reader(r: impl BufRead) -> Result<AuditReport, AuditError> {
    let mut a = Auditor::new();
    for line in r.lines() {
        a.feed(&line?)?;
    }
    Ok(a.finish())
}

pub fn audit_str(text: &str) -> Result<AuditReport, AuditError> {
    audit_reader(text.as_bytes())
}

pub fn audit_file(path: &Path) -> Result<AuditReport, AuditError> {
    audit_reader(BufReader::new(File::open(path)?))
}

/// Audits a log as it is written, without keeping it.
#[derive(Default)]
pub struct AuditSink {
    auditor: Auditor,
    partial: Vec<u8>,
    error: Option<AuditError>,
}

impl AuditSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn finish(mut self) -> Result<AuditReport, AuditError> {
        if !self.partial.is_empty() {
            let rest = std::mem::take(&mut self.partial);
            self.feed_bytes(&rest);
        }
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.auditor.finish()),
        }
    }

    fn feed_bytes(&mut self, line: &[u8]) {
        if self.error.is_some() {
            return;
        }
        let res = match std::str::from_utf8(line) {
            Ok(s) => self.auditor.feed(s),
            Err(_) => Err(AuditError::Parse { line: self.auditor.line + 1, message: "not UTF-8".into() }),
        };
        if let Err(e) = res {
            self.error = Some(e);
        }
    }
}

impl Write for AuditSink {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let mut rest = buf;
        while let Some(i) = rest.iter().position(|&b| b == b'\n') {
            if self.partial.is_empty() {
                self.feed_bytes(&rest[..i]);
            } else {
                self.partial.extend_from_slice(&rest[..i]);
                let line = std::mem::take(&mut self.partial);
                self.feed_bytes(&line);
            }
            rest = &rest[i + 1..];
        }
        self.partial.extend_from_slice(rest);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two bookies, quorum 2 of 2, one message through the whole path.
    const CLEAN: &str = "\
0\tconfig\t2\t2\t2
0\tnic\tb0\t1000000000
0\tlayer\th0\t15000000\t22000000
0\tbookie\tk0\th0\th0
0\tbookie\tk1\th0\th0
100\tpublish\t0\tload\t7\t0\t3\tb0
200\tsend\t0\tb0
200\tnic_tx\tb0\t0\t5600\t200\t5800
200\tnic_tx\tb0\t0\t5600\t5800\t11400
5800\tenqueue\tk0\t0
5800\tfsync_start\tk0\t0\t1000\t0
6800\tfsync_end\tk0\t0
6800\tbookie_ack\tk0\t0\t0
6800\tbroker_ack\tb0\t0\tk0
11400\tenqueue\tk1\t0
11400\tfsync_start\tk1\t0\t1000\t0
12400\tfsync_end\tk1\t0
12400\tbookie_ack\tk1\t0\t0
12400\tbroker_ack\tb0\t0\tk1
12400\tpublish_ack\t0\t12300\t12200
13000\tdeliver\t0\t7\t0\t1
";

    #[test]
    fn clean_log_passes() {
        let r = audit_str(CLEAN).unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.records, 21);
    }

    #[test]
    fn sink_matches_reader() {
        let mut s = AuditSink::new();
        for chunk in CLEAN.as_bytes().chunks(7) {
            s.write_all(chunk).unwrap();
        }
        assert_eq!(s.finish().unwrap(), audit_str(CLEAN).unwrap());
    }

    #[test]
    fn malformed_line_names_its_number() {
        let text = CLEAN.replace("200\tsend\t0\tb0", "200\tsend\t0");
        match audit_str(&text) {
            Err(AuditError::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
        assert!(matches!(audit_str("5\tteleport\t1\n"), Err(AuditError::Parse { line: 1, .. })));
    }

    #[test]
    fn out_of_order_time_is_caught() {
        let text = CLEAN.replace("13000\tdeliver", "12000\tdeliver");
        let r = audit_str(&text).unwrap();
        assert!(!r.verdict(Check::TimeOrder).passed());
    }
}
