//! Latency histograms, rate series and the per-component latency breakdown.

use crate::time::{SimDuration, SimTime, NANOS_PER_SEC};

/// Values below this are recorded exactly.
const LINEAR_LIMIT: u64 = 256;
const SUB_BITS: u32 = 7;
const SUB_BUCKETS: u64 = 1 << SUB_BITS;
/// Largest representable value: 100 s.
pub const HISTOGRAM_MAX: u64 = 100 * NANOS_PER_SEC;

fn bucket_index(v: u64) -> usize {
    if v < LINEAR_LIMIT {
        return v as usize;
    }
    let exp = 63 - v.leading_zeros();
    let sub = (v >> (exp - SUB_BITS)) & (SUB_BUCKETS - 1);
    (LINEAR_LIMIT + (exp as u64 - 8) * SUB_BUCKETS + sub) as usize
}

/// `[lo, hi)` of bucket `idx`.
fn bucket_bounds(idx: usize) -> (u64, u64) {
    let idx = idx as u64;
    if idx < LINEAR_LIMIT {
        return (idx, idx + 1);
    }
    let k = idx - LINEAR_LIMIT;
    let exp = (k / SUB_BUCKETS) as u32 + 8;
    let sub = k % SUB_BUCKETS;
    let width = 1u64 << (exp - SUB_BITS);
    let lo = (SUB_BUCKETS + sub) * width;
    (lo, lo + width)
}

fn bucket_count() -> usize {
    bucket_index(HISTOGRAM_MAX) + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmptyHistogram;

impl std::fmt::Display for EmptyHistogram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("histogram is empty")
    }
}

impl std::error::Error for EmptyHistogram {}

/// Log-bucketed latency recorder over nanoseconds: exact below 256 ns, then
/// 128 buckets per power of two (relative bucket width at most 1/128).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatencyHistogram {
    counts: Vec<u64>,
    count: u64,
    sum: u128,
    min: u64,
    max: u64,
    overflow: u64,
}

impl Default for LatencyHistogram {
    fn default() -> Self {
        Self::new()
    }
}

impl LatencyHistogram {
    pub fn new() -> Self {
        LatencyHistogram { counts: vec![0; bucket_count()], count: 0, sum: 0, min: u64::MAX, max: 0, overflow: 0 }
    }

    pub fn record(&mut self, v: SimDuration) {
        let mut ns = v.as_nanos();
        if ns > HISTOGRAM_MAX {
            self.overflow += 1;
            ns = HISTOGRAM_MAX;
        }
        self.counts[bucket_index(ns)] += 1;
        self.count += 1;
        self.sum += ns as u128;
        self.min = self.min.min(ns);
        self.max = self.max.max(ns);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn overflow(&self) -> u64 {
        self.overflow
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn max(&self) -> Option<SimDuration> {
        (self.count > 0).then(|| SimDuration::from_nanos(self.max))
    }

    pub fn min(&self) -> Option<SimDuration> {
        (self.count > 0).then(|| SimDuration::from_nanos(self.min))
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum as f64 / self.count as f64)
    }

    /// Nearest-rank quantile, reported as the midpoint of the bucket holding
    /// that rank, clamped to the observed min and max. The extreme ranks
    /// return the exact min and max.
    pub fn quantile(&self, q: f64) -> Result<SimDuration, EmptyHistogram> {
        if self.count == 0 {
            return Err(EmptyHistogram);
        }
        let q = q.clamp(0.0, 1.0);
        let rank = ((q * self.count as f64).ceil() as u64).clamp(1, self.count);
        if rank == 1 {
            return Ok(SimDuration::from_nanos(self.min));
        }
        if rank == self.count {
            return Ok(SimDuration::from_nanos(self.max));
        }
        let mut seen = 0;
        for (idx, &c) in self.counts.iter().enumerate() {
            seen += c;
            if seen >= rank {
                let (lo, hi) = bucket_bounds(idx);
                let mid = lo + (hi - 1 - lo) / 2;
                return Ok(SimDuration::from_nanos(mid.clamp(self.min, self.max)));
            }
        }
        Ok(SimDuration::from_nanos(self.max))
    }

    /// Quantile in milliseconds, 0 for an empty histogram.
    pub fn quantile_ms(&self, q: f64) -> f64 {
        self.quantile(q).map(|d| d.as_millis_f64()).unwrap_or(0.0)
    }

    pub fn merge(&mut self, other: &LatencyHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.count += other.count;
        self.sum += other.sum;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        self.overflow += other.overflow;
    }

    /// Non-empty buckets as `(lo_ns, hi_ns, count)`.
    pub fn buckets(&self) -> impl Iterator<Item = (u64, u64, u64)> + '_ {
        self.counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, &c)| {
            let (lo, hi) = bucket_bounds(i);
            (lo, hi, c)
        })
    }
}

/// Per-component medians of the publish path, in the order the latency
/// table reports them.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ComponentBreakdown {
    pub journal_fsync: SimDuration,
    pub group_wait: SimDuration,
    pub bk_processing: SimDuration,
    pub broker_network: SimDuration,
    pub total_p50: SimDuration,
}

impl ComponentBreakdown {
    pub fn component_sum(&self) -> SimDuration {
        self.journal_fsync + self.group_wait + self.bk_processing + self.broker_network
    }

    /// total_p50 minus the sum of component medians, in ms (may be negative).
    pub fn residual_ms(&self) -> f64 {
        self.total_p50.as_millis_f64() - self.component_sum().as_millis_f64()
    }

    pub fn rows(&self) -> [(&'static str, SimDuration); 4] {
        [
            ("journal_fsync", self.journal_fsync),
            ("group_wait", self.group_wait),
            ("bk_processing", self.bk_processing),
            ("broker_network", self.broker_network),
        ]
    }
}

/// Tagged per-entry sub-latencies collected during a run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ComponentSamples {
    pub journal_fsync: LatencyHistogram,
    pub group_wait: LatencyHistogram,
    pub bk_processing: LatencyHistogram,
    pub broker_network: LatencyHistogram,
}

impl ComponentSamples {
    pub fn merge(&mut self, other: &ComponentSamples) {
        self.journal_fsync.merge(&other.journal_fsync);
        self.group_wait.merge(&other.group_wait);
        self.bk_processing.merge(&other.bk_processing);
        self.broker_network.merge(&other.broker_network);
    }
}

/// Component medians from tagged samples and total P50 from `publish`.
pub fn decompose(samples: &ComponentSamples, publish: &LatencyHistogram) -> ComponentBreakdown {
    let med = |h: &LatencyHistogram| h.quantile(0.5).unwrap_or(SimDuration::ZERO);
    ComponentBreakdown {
        journal_fsync: med(&samples.journal_fsync),
        group_wait: med(&samples.group_wait),
        bk_processing: med(&samples.bk_processing),
        broker_network: med(&samples.broker_network),
        total_p50: med(publish),
    }
}

/// One-second bucket of a broker's activity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RateBucket {
    pub published: u64,
    pub acked: u64,
    pub delivered: u64,
    /// Bits that left the broker's NIC during the second.
    pub tx_bits: u64,
}

/// Per-broker activity at 1 s resolution.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RateSeries {
    pub buckets: Vec<RateBucket>,
}

impl RateSeries {
    pub fn with_seconds(n: usize) -> Self {
        RateSeries { buckets: vec![RateBucket::default(); n] }
    }

    fn slot(&mut self, t_ns: u64) -> Option<&mut RateBucket> {
        self.buckets.get_mut((t_ns / NANOS_PER_SEC) as usize)
    }

    pub fn published(&mut self, t_ns: u64) {
        if let Some(b) = self.slot(t_ns) {
            b.published += 1;
        }
    }

    pub fn acked(&mut self, t_ns: u64) {
        if let Some(b) = self.slot(t_ns) {
            b.acked += 1;
        }
    }

    pub fn delivered(&mut self, t_ns: u64) {
        if let Some(b) = self.slot(t_ns) {
            b.delivered += 1;
        }
    }

    /// Credits a transmission over `[start, end)` to the seconds it spans,
    /// pro rata.
    pub fn transmitted(&mut self, start_ns: u64, end_ns: u64, bits: u64) {
        if end_ns <= start_ns {
            if let Some(b) = self.slot(start_ns) {
                b.tx_bits += bits;
            }
            return;
        }
        let span = (end_ns - start_ns) as u128;
        let mut credited = 0u64;
        let mut t = start_ns;
        while t < end_ns {
            let sec_end = (t / NANOS_PER_SEC + 1) * NANOS_PER_SEC;
            let seg_end = sec_end.min(end_ns);
            let share = if seg_end == end_ns {
                bits - credited
            } else {
                (bits as u128 * (seg_end - start_ns) as u128 / span) as u64 - credited
            };
            credited += share;
            if let Some(b) = self.slot(t) {
                b.tx_bits += share;
            }
            t = seg_end;
        }
    }
}

/// Message accounting checked at the end of every run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub published: u64,
    pub acked: u64,
    pub failed: u64,
    pub in_flight: u64,
    pub delivered: u64,
}

impl Counters {
    pub fn balanced(&self) -> bool {
        self.published == self.acked + self.failed + self.in_flight && self.delivered <= self.acked
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContentionRecord {
    pub layer: String,
    pub start: SimTime,
    pub end: SimTime,
    pub burst_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GcPauseRecord {
    pub process: String,
    pub start: SimTime,
    pub length: SimDuration,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BrokerStats {
    pub name: String,
    pub publish: LatencyHistogram,
    pub rates: RateSeries,
    /// NIC capacity in bits per second.
    pub nic_bandwidth: u64,
    pub tx_bits: u64,
}

/// System CPU of a host outside and inside writeback bursts, in percent.
pub const CPU_IDLE_PCT: f64 = 0.2;
pub const CPU_BURST_PCT: f64 = 1.6;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerStats {
    pub name: String,
    pub windows: usize,
    /// Contention time inside the run, windows clipped to the horizon.
    pub contention: SimDuration,
    /// Reported only; does not feed back into latency.
    pub system_cpu_pct: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimReport {
    pub name: String,
    pub seed: u64,
    pub duration: SimDuration,
    pub publish: LatencyHistogram,
    pub e2e: LatencyHistogram,
    pub brokers: Vec<BrokerStats>,
    pub samples: ComponentSamples,
    pub components: ComponentBreakdown,
    pub counters: Counters,
    pub contention: Vec<ContentionRecord>,
    pub layers: Vec<LayerStats>,
    pub gc_pauses: Vec<GcPauseRecord>,
    pub fsyncs: u64,
    pub contended_fsyncs: u64,
    /// Most sealed groups seen waiting behind an fsync.
    pub max_journal_queue: usize,
    pub events_fired: u64,
    pub fingerprint: u64,
}

impl SimReport {
    pub fn total_contention(&self) -> SimDuration {
        self.layers.iter().fold(SimDuration::ZERO, |a, l| a + l.contention)
    }

    /// Acknowledged messages per simulated second.
    pub fn ack_rate(&self) -> f64 {
        let secs = self.duration.as_secs_f64();
        if secs == 0.0 {
            0.0
        } else {
            self.counters.acked as f64 / secs
        }
    }

    /// Mean NIC egress over seconds `[from, to)` summed over brokers, in bits/s.
    pub fn tx_rate(&self, from: usize, to: usize) -> f64 {
        if to <= from {
            return 0.0;
        }
        let bits: u64 = self
            .brokers
            .iter()
            .map(|b| b.rates.buckets.iter().skip(from).take(to - from).map(|r| r.tx_bits).sum::<u64>())
            .sum();
        bits as f64 / (to - from) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::LogNormalLatency;
    use crate::engine::RngState;

    fn exact_quantile(sorted: &[u64], q: f64) -> u64 {
        let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        sorted[rank - 1]
    }

    #[test]
    fn buckets_tile_the_range() {
        let n = bucket_count();
        let mut prev_hi = 0;
        for i in 0..n {
            let (lo, hi) = bucket_bounds(i);
            assert_eq!(lo, prev_hi);
            assert!(hi > lo);
            if lo >= LINEAR_LIMIT {
                assert!((hi - lo) as f64 / lo as f64 <= 1.0 / 128.0 + 1e-12);
            }
            assert_eq!(bucket_index(lo), i);
            assert_eq!(bucket_index(hi - 1), i);
            prev_hi = hi;
        }
        assert!(prev_hi > HISTOGRAM_MAX);
    }

    #[test]
    fn zero_goes_to_lowest_bucket() {
        let mut h = LatencyHistogram::new();
        h.record(SimDuration::ZERO);
        assert_eq!(h.buckets().next(), Some((0, 1, 1)));
        assert_eq!(h.quantile(0.5).unwrap(), SimDuration::ZERO);
    }

    #[test]
    fn single_value_all_quantiles_equal() {
        let mut h = LatencyHistogram::new();
        h.record(SimDuration::from_micros(3_880));
        let q: Vec<SimDuration> = [0.0, 0.5, 0.99, 1.0].iter().map(|&q| h.quantile(q).unwrap()).collect();
        assert!(q.iter().all(|&v| v == q[0]));
        assert_eq!(q[0], SimDuration::from_micros(3_880));
    }

    #[test]
    fn empty_signal() {
        assert_eq!(LatencyHistogram::new().quantile(0.5), Err(EmptyHistogram));
    }

    #[test]
    fn uniform_micros_median() {
        let mut h = LatencyHistogram::new();
        for us in 1..=1000u64 {
            h.record(SimDuration::from_micros(us));
        }
        let med = h.quantile(0.5).unwrap().as_nanos() as f64;
        assert!((med - 500_000.0).abs() / 500_000.0 < 0.01, "median {med}");
        assert_eq!(h.quantile(1.0).unwrap(), SimDuration::from_micros(1000));
        assert_eq!(h.quantile(0.0).unwrap(), SimDuration::from_micros(1));
    }

    #[test]
    fn lognormal_quantiles_match_sorted_oracle() {
        let mut rng = RngState::new(42).stream("hist");
        let d = LogNormalLatency::new(SimDuration::from_millis(4), 0.8);
        let mut h = LatencyHistogram::new();
        let mut v = Vec::with_capacity(10_000);
        for _ in 0..10_000 {
            let x = d.sample(&mut rng);
            h.record(x);
            v.push(x.as_nanos());
        }
        v.sort_unstable();
        for q in [0.5, 0.95, 0.99, 0.999] {
            let exact = exact_quantile(&v, q) as f64;
            let got = h.quantile(q).unwrap().as_nanos() as f64;
            assert!((got - exact).abs() / exact < 0.01, "q{q}: {got} vs {exact}");
        }
    }

    #[test]
    fn overflow_clamps_to_top() {
        let mut h = LatencyHistogram::new();
        h.record(SimDuration::from_secs(500));
        assert_eq!(h.overflow(), 1);
        assert_eq!(h.max(), Some(SimDuration::from_secs(100)));
    }

    #[test]
    fn decomposition_of_empty_run_is_zero() {
        let b = decompose(&ComponentSamples::default(), &LatencyHistogram::new());
        assert_eq!(b, ComponentBreakdown::default());
        assert_eq!(b.residual_ms(), 0.0);
    }

    #[test]
    fn transmit_credit_is_prorated() {
        let mut r = RateSeries::with_seconds(3);
        r.transmitted(NANOS_PER_SEC / 2, NANOS_PER_SEC * 3 / 2, 1000);
        assert_eq!(r.buckets[0].tx_bits, 500);
        assert_eq!(r.buckets[1].tx_bits, 500);
        r.transmitted(0, 0, 7);
        assert_eq!(r.buckets[0].tx_bits, 507);
    }

    #[test]
    fn counters_balance() {
        let c = Counters { published: 10, acked: 7, failed: 0, in_flight: 3, delivered: 7 };
        assert!(c.balanced());
        assert!(!Counters { in_flight: 2, ..c }.balanced());
    }
}
