//! End-to-end acceptance runs on the shipped presets. Each test prints one
//! PASS/FAIL line; run with `--nocapture` to see them all.

mod common;

use std::collections::HashMap;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::Rng;

use common::{fixture_caught, has_contended_fsync, negative_fixtures, Small};
use pulse_sim::audit::{AuditReport, AuditSink, Check};
use pulse_sim::engine::RngState;
use pulse_sim::metrics::{LatencyHistogram, SimReport};
use pulse_sim::routing::{first_order_violation, ConsumerEvent, HandoffPolicy, KeySharedDispatcher};
use pulse_sim::scenario::presets::{preset, PRESET_NAMES};
use pulse_sim::scenario::report::{broker_rates_csv, decomposition_csv, histogram_csv};
use pulse_sim::scenario::{apply_override, parse_document, Override, Scenario};
use pulse_sim::sim;
use pulse_sim::time::SimDuration;

/// Heavy runs go one at a time so wall-clock budgets measure the run alone.
fn exclusive() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report_line(name: &str, ok: bool, detail: &str) -> bool {
    println!("[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn within(got: f64, target: f64, tol: f64) -> bool {
    (got - target).abs() <= tol * target
}

fn with_overrides(sc: &Scenario, overrides: &[(&str, &str)]) -> Scenario {
    let mut doc = parse_document(&sc.to_text()).expect("preset text parses");
    for (k, v) in overrides {
        apply_override(&mut doc, &Override::new(k, v).unwrap()).unwrap();
    }
    pulse_sim::scenario::parse::build_scenario(&doc).unwrap_or_else(|e| panic!("{e:?}"))
}

fn timed_run(sc: &Scenario) -> (SimReport, Duration) {
    let t = Instant::now();
    let r = sim::run(sc).expect("run");
    (r, t.elapsed())
}

fn audited_run(sc: &Scenario) -> (SimReport, AuditReport) {
    let mut sink = AuditSink::new();
    let r = sim::run_traced(sc, Some(&mut sink)).expect("run");
    (r, sink.finish().expect("trace parses"))
}

fn ms(h: &LatencyHistogram, q: f64) -> f64 {
    h.quantile_ms(q)
}

#[test]
fn decomposition_reproduction() {
    let _g = exclusive();
    let (opt, opt_wall) = timed_run(&preset("optimized").unwrap());
    let (base, base_wall) = timed_run(&preset("prod-baseline").unwrap());

    let targets = [0.02, 1.0, 1.86, 1.0];
    let rows = opt.components.rows();
    let comps_ok = rows.iter().zip(targets).all(|((_, d), t)| within(d.as_millis_f64(), t, 0.15));
    let opt_p50 = ms(&opt.publish, 0.5);
    let base_p50 = ms(&base.publish, 0.5);
    let budget = Duration::from_secs(30);
    let ok = within(opt_p50, 3.88, 0.15) && comps_ok && within(base_p50, 18.1, 0.15) && opt_wall < budget && base_wall < budget;
    let parts: Vec<String> = rows.iter().map(|(n, d)| format!("{n} {:.3}", d.as_millis_f64())).collect();
    let detail = format!(
        "optimized p50 {opt_p50:.3} ms [{}] in {:.1}s; prod-baseline p50 {base_p50:.3} ms in {:.1}s",
        parts.join(", "),
        opt_wall.as_secs_f64(),
        base_wall.as_secs_f64()
    );
    assert!(report_line("decomposition reproduction", ok, &detail));
}

#[test]
fn flush_interval_direction() {
    let _g = exclusive();
    let base = preset("flush-sweep-30").unwrap();
    let runs: Vec<SimReport> = ["15s", "30s", "60s"]
        .iter()
        .map(|v| sim::run(&with_overrides(&base, &[("write_cache.flush_interval", v)])).unwrap())
        .collect();
    let p50: Vec<f64> = runs.iter().map(|r| ms(&r.publish, 0.5)).collect();
    let p99: Vec<f64> = runs.iter().map(|r| ms(&r.publish, 0.99)).collect();
    let median_order = p50[1] < p50[2];
    let tail_order = p99[0] > p99[1];
    let calibrated = within(p50[1], 1.42, 0.25);
    let detail = format!(
        "p50 15/30/60s = {:.3}/{:.3}/{:.3} ms (30<60: {median_order}), p99 = {:.3}/{:.3}/{:.3} ms (15>30: {tail_order}), 30s p50 near 1.42: {calibrated}",
        p50[0], p50[1], p50[2], p99[0], p99[1], p99[2]
    );
    assert!(report_line("flush-interval direction", median_order && tail_order && calibrated, &detail));
}

#[test]
fn writeback_contention() {
    let _g = exclusive();
    let demo = preset("writeback-demo").unwrap();
    let (r, audit) = audited_run(&demo);
    let band = audit.verdict(Check::ContentionBand);
    let band_ok = band.passed() && band.checked > 0 && audit.passed();
    let ratio = ms(&r.publish, 0.999) / ms(&r.publish, 0.5);

    let tuned = with_overrides(&demo, &[("layer.dirty_ratio", "2"), ("layer.dirty_background_ratio", "1")]);
    let (t, _) = timed_run(&tuned);
    let before = r.total_contention().as_secs_f64();
    let after = t.total_contention().as_secs_f64();
    let reduction = 1.0 - after / before;
    let ok = band_ok && ratio >= 10.0 && reduction >= 0.60;
    let detail = format!(
        "{} in-window fsync draws audited (band ok: {band_ok}), p99.9/p50 = {ratio:.1}, contention {before:.2}s -> {after:.2}s ({:.0}% less)",
        band.checked,
        reduction * 100.0
    );
    assert!(report_line("writeback contention", ok, &detail));
}

#[test]
fn gc_comparison() {
    let _g = exclusive();
    let a = sim::run(&preset("gc-compare-A").unwrap()).unwrap();
    let c = sim::run(&preset("gc-compare-C").unwrap()).unwrap();
    let max = |r: &SimReport| r.publish.max().unwrap_or(SimDuration::ZERO).as_millis_f64();
    let (ma, mc) = (max(&a), max(&c));
    let ok = ma >= 200.0 && mc < 50.0;
    assert!(report_line("gc comparison", ok, &format!("g1 max {ma:.1} ms, zgc max {mc:.2} ms")));
}

#[test]
fn network_saturation() {
    let _g = exclusive();
    let fast_sc = preset("nic-25g").unwrap();
    // the same topology scaled down to a 100 Mbps link at 120% offered load
    let slow_sc = with_overrides(&fast_sc, &[("nic.bandwidth", "100Mbps"), ("producer.rate", "10714")]);
    let slow = sim::run(&slow_sc).unwrap();
    let fast = sim::run(&fast_sc).unwrap();

    // skip the first second: the link queue is still filling
    let secs = slow.duration.as_secs_f64() as usize;
    let slow_tx = slow.tx_rate(1, secs);
    let fast_tx = fast.tx_rate(1, secs);
    let scale = fast.ack_rate() / slow.ack_rate();
    let failed = slow.counters.failed + fast.counters.failed;
    let ok = within(slow_tx, 100e6, 0.02) && within(fast_tx, 250e6, 0.02) && within(scale, 2.5, 0.02) && failed == 0;
    let detail = format!(
        "100 Mbps link carries {:.2} Mbps, 250 Mbps carries {:.2} Mbps, acked throughput x{scale:.3}, {failed} failed",
        slow_tx / 1e6,
        fast_tx / 1e6
    );
    assert!(report_line("network saturation", ok, &detail));
}

#[test]
fn federation_properties() {
    let sc = preset("federation-15m").unwrap();
    let map = sc.federation_map().expect("five ranges cover 0..=127 exactly");
    let expected = [(0, 25), (26, 51), (52, 77), (78, 102), (103, 127)];
    let bounds: Vec<(u32, u32)> = map.ranges().iter().map(|r| (r.lo, r.hi)).collect();
    let cover_ok = bounds == expected && map.total_partitions() == 128;

    let mut hits: HashMap<usize, u32> = HashMap::new();
    let n = 10_000;
    for i in 0..n {
        let (range, p) = map.route(format!("order-{i}").as_bytes());
        assert!(map.ranges()[range].contains(p));
        *hits.entry(range).or_default() += 1;
    }
    let proportional = map.ranges().iter().enumerate().all(|(i, r)| {
        let want = n as f64 * r.width() as f64 / 128.0;
        within(hits.get(&i).copied().unwrap_or(0) as f64, want, 0.10)
    });

    // 100 membership changes interleaved with traffic on 64 keys
    let mut rng = RngState::new(2024).stream("churn");
    let mut d = KeySharedDispatcher::new(HandoffPolicy::DrainFirst, 4);
    let mut members: Vec<u32> = vec![0, 1, 2];
    for c in &members {
        d.apply(ConsumerEvent::Join(*c)).unwrap();
    }
    let mut next_id = 3;
    let mut published: HashMap<u32, u64> = HashMap::new();
    let mut changes = 0;
    while changes < 100 {
        for _ in 0..rng.random_range(1..20) {
            let key = rng.random_range(0..64u32);
            let s = published.entry(key).or_default();
            d.publish(key, *s).unwrap();
            *s += 1;
        }
        if members.len() > 1 && rng.random_bool(0.5) {
            let who = members.remove(rng.random_range(0..members.len()));
            d.apply(ConsumerEvent::Leave(who)).unwrap();
        } else {
            members.push(next_id);
            d.apply(ConsumerEvent::Join(next_id)).unwrap();
            next_id += 1;
        }
        changes += 1;
        d.step().unwrap();
    }
    while d.pending() > 0 {
        d.step().unwrap();
    }
    // exhaustive: every key's deliveries are exactly 0, 1, 2, ... in order
    let mut seen: HashMap<u32, Vec<u64>> = HashMap::new();
    for x in &d.deliveries {
        seen.entry(x.key).or_default().push(x.seq);
    }
    let exhaustive = published.iter().all(|(k, n)| seen.get(k).is_some_and(|v| v.iter().copied().eq(0..*n)));
    let order_ok = first_order_violation(&d.deliveries).is_none() && exhaustive;

    let detail = format!(
        "cover {cover_ok}, shares {:?} of {n} keys, {changes} membership changes over {} deliveries in order: {order_ok}",
        (0..5).map(|i| hits.get(&i).copied().unwrap_or(0)).collect::<Vec<_>>(),
        d.deliveries.len()
    );
    assert!(report_line("federation properties", cover_ok && proportional && order_ok, &detail));
}

fn monotone(h: &LatencyHistogram) -> bool {
    if h.is_empty() {
        return true;
    }
    let qs: Vec<SimDuration> = (0..=1000).map(|i| h.quantile(i as f64 / 1000.0).unwrap()).collect();
    qs.windows(2).all(|w| w[0] <= w[1])
}

fn csvs(r: &SimReport) -> [String; 4] {
    [histogram_csv(&r.publish), histogram_csv(&r.e2e), broker_rates_csv(r), decomposition_csv(r)]
}

#[test]
fn property_suites() {
    let _g = exclusive();
    let mut failures: Vec<String> = Vec::new();
    for name in PRESET_NAMES {
        let sc = preset(name).unwrap();
        let (plain, _) = timed_run(&sc);
        let (traced, audit) = audited_run(&sc);
        if csvs(&plain) != csvs(&traced) || plain != traced {
            failures.push(format!("{name}: runs differ"));
        }
        if !plain.counters.balanced() {
            failures.push(format!("{name}: counters {:?}", plain.counters));
        }
        let hists = [&plain.publish, &plain.e2e].into_iter().chain(plain.brokers.iter().map(|b| &b.publish));
        if !hists.into_iter().all(monotone) {
            failures.push(format!("{name}: quantiles not monotone"));
        }
        if !audit.passed() {
            failures.push(format!("{name}: audit\n{audit}"));
        }
    }

    // 10,000 draws against a sorted copy
    let mut rng = RngState::new(99).stream("oracle");
    let dist = pulse_sim::dist::LogNormalLatency::new(SimDuration::from_millis(2), 0.8);
    let mut raw: Vec<u64> = (0..10_000).map(|_| dist.sample(&mut rng).as_nanos()).collect();
    let mut h = LatencyHistogram::new();
    raw.iter().for_each(|v| h.record(SimDuration::from_nanos(*v)));
    raw.sort_unstable();
    for q in [0.001, 0.01, 0.1, 0.5, 0.9, 0.99, 0.999, 1.0] {
        let exact = raw[((q * raw.len() as f64).ceil() as usize).max(1) - 1] as f64;
        let got = h.quantile(q).unwrap().as_nanos() as f64;
        if !within(got, exact, 0.01) {
            failures.push(format!("quantile {q}: {got} vs {exact}"));
        }
    }

    let (_, clean) = Small { rate: 1_500, millis: 4_000, qw: 3, qa: 2, ..Small::default() }.trace();
    assert!(has_contended_fsync(&clean), "negative fixtures need a contended fsync");
    let fixtures = negative_fixtures(&clean);
    for f in &fixtures {
        if let Err(e) = fixture_caught(f) {
            failures.push(e);
        }
    }

    let detail = if failures.is_empty() {
        format!(
            "{} presets deterministic, balanced, monotone and audit-clean; histogram within 1% of oracle; {} negative fixtures rejected",
            PRESET_NAMES.len(),
            fixtures.len()
        )
    } else {
        failures.join("; ")
    };
    assert!(report_line("property suites", failures.is_empty(), &detail));
}
