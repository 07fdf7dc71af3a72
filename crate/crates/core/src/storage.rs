//! Journal device fdatasync latency and the host block layer that couples
//! physically separate devices.
//!
//! Every device hangs off a [`BlockLayer`]. While the layer is inside a
//! writeback contention window, any fdatasync issued by any device on that
//! layer draws from the degraded band instead of the device's own
//! distribution. Devices on other layers are unaffected.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::dist::LogNormalLatency;
use crate::engine::SimRng;
use crate::time::{SimDuration, SimTime, NANOS_PER_SEC};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeviceId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LayerId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeviceTier {
    NewNvme,
    WornNvme,
    WornSsd,
    Custom,
}

impl DeviceTier {
    /// Median fdatasync latency of the tier; `Custom` has none.
    pub fn preset_p50(self) -> Option<SimDuration> {
        match self {
            DeviceTier::NewNvme => Some(SimDuration::from_micros(20)),
            // geometric middle of the 2.65-6.61 ms band observed on the worn drive
            DeviceTier::WornNvme => Some(SimDuration::from_micros(4_190)),
            DeviceTier::WornSsd => Some(SimDuration::from_micros(5_100)),
            DeviceTier::Custom => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DeviceTier::NewNvme => "new_nvme",
            DeviceTier::WornNvme => "worn_nvme",
            DeviceTier::WornSsd => "worn_ssd",
            DeviceTier::Custom => "custom",
        }
    }
}

impl fmt::Display for DeviceTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DeviceTier {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "new_nvme" => Ok(DeviceTier::NewNvme),
            "worn_nvme" => Ok(DeviceTier::WornNvme),
            "worn_ssd" => Ok(DeviceTier::WornSsd),
            "custom" => Ok(DeviceTier::Custom),
            other => Err(format!("unknown device tier '{other}' (new_nvme, worn_nvme, worn_ssd, custom)")),
        }
    }
}

pub const DEFAULT_FSYNC_SIGMA: f64 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceModel {
    pub id: DeviceId,
    pub tier: DeviceTier,
    pub fsync_p50: SimDuration,
    pub fsync_sigma: f64,
    pub layer: LayerId,
}

impl DeviceModel {
    /// Device with the tier's preset median and the default spread.
    pub fn with_tier(id: DeviceId, tier: DeviceTier, layer: LayerId) -> Self {
        DeviceModel {
            id,
            tier,
            fsync_p50: tier.preset_p50().unwrap_or(SimDuration::ZERO),
            fsync_sigma: DEFAULT_FSYNC_SIGMA,
            layer,
        }
    }

    pub fn baseline(&self) -> LogNormalLatency {
        LogNormalLatency::new(self.fsync_p50, self.fsync_sigma)
    }
}

/// Kernel dirty-page writeback knobs (`vm.dirty_*`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OsTunables {
    pub dirty_ratio: u8,
    pub dirty_background_ratio: u8,
    pub dirty_expire_centisecs: u32,
    pub dirty_writeback_centisecs: u32,
}

impl OsTunables {
    /// Untuned host: dirty_ratio 40.
    pub const UNTUNED: OsTunables = OsTunables {
        dirty_ratio: 40,
        dirty_background_ratio: 10,
        dirty_expire_centisecs: 3000,
        dirty_writeback_centisecs: 500,
    };

    /// The sysctl set applied to the bookie hosts.
    pub const TUNED: OsTunables = OsTunables {
        dirty_ratio: 2,
        dirty_background_ratio: 1,
        dirty_expire_centisecs: 500,
        dirty_writeback_centisecs: 100,
    };

    pub fn validate(&self) -> Result<(), String> {
        if self.dirty_background_ratio == 0
            || self.dirty_background_ratio > self.dirty_ratio
            || self.dirty_ratio > 100
        {
            return Err(format!(
                "dirty ratios must satisfy 0 < dirty_background_ratio ({}) <= dirty_ratio ({}) <= 100",
                self.dirty_background_ratio, self.dirty_ratio
            ));
        }
        if self.dirty_writeback_centisecs == 0 {
            return Err("dirty_writeback_centisecs must be > 0".into());
        }
        Ok(())
    }

    /// Cadence of the background drain check.
    pub fn writeback_period(&self) -> SimDuration {
        SimDuration::from_millis(10 * self.dirty_writeback_centisecs as u64)
    }
}

impl Default for OsTunables {
    fn default() -> Self {
        OsTunables::UNTUNED
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContentionWindow {
    pub layer: LayerId,
    pub start: SimTime,
    pub end: SimTime,
    pub burst_bytes: u64,
}

impl ContentionWindow {
    pub fn len(&self) -> SimDuration {
        self.end - self.start
    }
}

/// Static description of a block layer, as read from a scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockLayerConfig {
    pub id: LayerId,
    pub total_ram: u64,
    /// Writeback throughput in bytes per second.
    pub drain_rate: u64,
    pub degraded_lo: SimDuration,
    pub degraded_hi: SimDuration,
    pub tunables: OsTunables,
    /// Bytes per second dirtied by other writers on the host.
    pub background_write_rate: u64,
}

impl BlockLayerConfig {
    pub fn new(id: LayerId, total_ram: u64, tunables: OsTunables) -> Self {
        BlockLayerConfig {
            id,
            total_ram,
            drain_rate: 1 << 30,
            degraded_lo: SimDuration::from_millis(15),
            degraded_hi: SimDuration::from_millis(22),
            tunables,
            background_write_rate: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.tunables.validate()?;
        if self.degraded_lo >= self.degraded_hi {
            return Err(format!("degraded_lo ({}) must be < degraded_hi ({})", self.degraded_lo, self.degraded_hi));
        }
        if self.drain_rate == 0 {
            return Err("drain_rate must be > 0".into());
        }
        if self.total_ram == 0 {
            return Err("total_ram must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BlockLayer {
    pub config: BlockLayerConfig,
    /// Contention is active iff `now < contention_until`.
    pub contention_until: SimTime,
    pub dirty_bytes: u64,
    pub background_drain_active: bool,
    pub windows: Vec<ContentionWindow>,
}

impl BlockLayer {
    pub fn new(config: BlockLayerConfig) -> Self {
        BlockLayer {
            config,
            contention_until: SimTime::ZERO,
            dirty_bytes: 0,
            background_drain_active: false,
            windows: Vec::new(),
        }
    }

    pub fn id(&self) -> LayerId {
        self.config.id
    }

    pub fn is_contended(&self, now: SimTime) -> bool {
        now < self.contention_until
    }

    fn percent_of_ram(&self, pct: u8) -> u64 {
        (self.config.total_ram as u128 * pct as u128 / 100) as u64
    }

    pub fn background_threshold(&self) -> u64 {
        self.percent_of_ram(self.config.tunables.dirty_background_ratio)
    }

    /// Largest writeback burst the dirty ratio allows.
    pub fn dirty_cap(&self) -> u64 {
        self.percent_of_ram(self.config.tunables.dirty_ratio)
    }

    pub fn accumulate_dirty(&mut self, bytes: u64) {
        if bytes == 0 {
            return;
        }
        self.dirty_bytes = self.dirty_bytes.saturating_add(bytes);
        self.background_drain_active = self.dirty_bytes > self.background_threshold();
    }

    /// One background flusher wake-up covering `period`: dirty bytes from
    /// other writers arrive, and if the background threshold is exceeded the
    /// layer drains at its writeback rate. Never opens a contention window.
    pub fn background_tick(&mut self, period: SimDuration) {
        let incoming = bytes_over(self.config.background_write_rate, period);
        self.accumulate_dirty(incoming);
        if self.background_drain_active {
            let drained = bytes_over(self.config.drain_rate, period);
            self.dirty_bytes = self.dirty_bytes.saturating_sub(drained);
            self.background_drain_active = self.dirty_bytes > self.background_threshold();
        }
    }

    /// Forced writeback of `flushed_bytes` plus everything already dirty,
    /// capped at the dirty ratio. Returns the length of the contention window
    /// this burst adds. A burst landing inside an open window queues behind
    /// it, since both share the layer's writeback bandwidth, and the bytes
    /// still under writeback count against the cap.
    pub fn begin_writeback_burst(&mut self, now: SimTime, flushed_bytes: u64) -> SimDuration {
        let outstanding = bytes_over(self.config.drain_rate, self.contention_until.saturating_since(now));
        let room = self.dirty_cap().saturating_sub(outstanding);
        let burst = self.dirty_bytes.saturating_add(flushed_bytes).min(room);
        self.dirty_bytes = 0;
        self.background_drain_active = false;
        let window = drain_time(burst, self.config.drain_rate);
        if window.is_zero() {
            return window;
        }
        let start = self.contention_until.max(now);
        self.contention_until = start + window;
        self.windows.push(ContentionWindow { layer: self.config.id, start, end: self.contention_until, burst_bytes: burst });
        window
    }

    /// Total virtual time spent inside contention windows.
    pub fn total_contention(&self) -> SimDuration {
        self.windows.iter().fold(SimDuration::ZERO, |acc, w| acc + w.len())
    }
}

fn bytes_over(rate_per_sec: u64, period: SimDuration) -> u64 {
    (rate_per_sec as u128 * period.as_nanos() as u128 / NANOS_PER_SEC as u128) as u64
}

/// Time to write `bytes` at `rate` bytes/s, rounded up to a whole nanosecond.
pub fn drain_time(bytes: u64, rate: u64) -> SimDuration {
    if bytes == 0 {
        return SimDuration::ZERO;
    }
    let ns = (bytes as u128 * NANOS_PER_SEC as u128).div_ceil(rate as u128);
    SimDuration::from_nanos(ns.min(u64::MAX as u128) as u64)
}

/// One fdatasync on `device`, issued at `now`.
pub fn sample_fsync(device: &DeviceModel, layer: &BlockLayer, now: SimTime, rng: &mut SimRng) -> SimDuration {
    debug_assert_eq!(device.layer, layer.id(), "device not registered on this layer");
    if layer.is_contended(now) {
        let lo = layer.config.degraded_lo.as_nanos();
        let hi = layer.config.degraded_hi.as_nanos();
        SimDuration::from_nanos(rng.random_range(lo..=hi))
    } else {
        device.baseline().sample(rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RngState;

    const GIB: u64 = 1 << 30;

    fn layer(ram: u64, tunables: OsTunables) -> BlockLayer {
        BlockLayer::new(BlockLayerConfig::new(LayerId(0), ram, tunables))
    }

    fn median_of_draws(device: &DeviceModel, layer: &BlockLayer, n: usize) -> f64 {
        let mut rng = RngState::new(11).stream("fsync");
        let mut v: Vec<u64> = (0..n).map(|_| sample_fsync(device, layer, SimTime::ZERO, &mut rng).as_nanos()).collect();
        v.sort_unstable();
        v[n / 2] as f64 / 1e6
    }

    #[test]
    fn new_nvme_median_is_twenty_microseconds() {
        let l = layer(64 * GIB, OsTunables::UNTUNED);
        let d = DeviceModel::with_tier(DeviceId(0), DeviceTier::NewNvme, LayerId(0));
        let med = median_of_draws(&d, &l, 10_001);
        assert!((med - 0.02).abs() <= 0.002, "median {med} ms");
    }

    #[test]
    fn worn_ssd_median_is_five_point_one() {
        let l = layer(64 * GIB, OsTunables::UNTUNED);
        let d = DeviceModel::with_tier(DeviceId(0), DeviceTier::WornSsd, LayerId(0));
        let med = median_of_draws(&d, &l, 10_001);
        assert!((med - 5.1).abs() <= 0.51, "median {med} ms");
    }

    #[test]
    fn worn_nvme_preset_inside_observed_band() {
        let p50 = DeviceTier::WornNvme.preset_p50().unwrap().as_millis_f64();
        assert!((2.65..=6.61).contains(&p50));
    }

    #[test]
    fn contended_draws_stay_in_band() {
        let mut l = layer(64 * GIB, OsTunables::UNTUNED);
        l.begin_writeback_burst(SimTime::ZERO, 3 * GIB);
        let mut rng = RngState::new(3).stream("fsync");
        for tier in [DeviceTier::NewNvme, DeviceTier::WornSsd, DeviceTier::WornNvme] {
            let d = DeviceModel::with_tier(DeviceId(1), tier, LayerId(0));
            for i in 0..2_000u64 {
                let t = SimTime::from_nanos(i * 1_000_000);
                let v = sample_fsync(&d, &l, t, &mut rng);
                assert!(v >= SimDuration::from_millis(15) && v <= SimDuration::from_millis(22));
            }
        }
    }

    #[test]
    fn coupling_is_by_layer_only() {
        let mut shared = layer(64 * GIB, OsTunables::UNTUNED);
        let other = BlockLayer::new(BlockLayerConfig::new(LayerId(1), 64 * GIB, OsTunables::UNTUNED));
        let journal = DeviceModel::with_tier(DeviceId(0), DeviceTier::NewNvme, LayerId(0));
        let ledger = DeviceModel::with_tier(DeviceId(1), DeviceTier::NewNvme, LayerId(0));
        let isolated = DeviceModel::with_tier(DeviceId(2), DeviceTier::NewNvme, LayerId(1));
        shared.begin_writeback_burst(SimTime::ZERO, GIB);
        let mut rng = RngState::new(5).stream("fsync");
        let t = SimTime::from_millis(100);
        for _ in 0..500 {
            assert!(sample_fsync(&journal, &shared, t, &mut rng) >= SimDuration::from_millis(15));
            assert!(sample_fsync(&ledger, &shared, t, &mut rng) >= SimDuration::from_millis(15));
            assert!(sample_fsync(&isolated, &other, t, &mut rng) < SimDuration::from_millis(1));
        }
    }

    #[test]
    fn accumulate_zero_is_noop() {
        let mut l = layer(64 * GIB, OsTunables::TUNED);
        l.accumulate_dirty(0);
        assert_eq!(l.dirty_bytes, 0);
        assert!(!l.background_drain_active);
    }

    #[test]
    fn background_threshold_arithmetic() {
        // 1% of 64 GiB = 0.64 GiB < 1 GiB
        let mut tuned = layer(64 * GIB, OsTunables { dirty_background_ratio: 1, ..OsTunables::UNTUNED });
        tuned.accumulate_dirty(GIB);
        assert!(tuned.background_drain_active);
        // 10% of 64 GiB = 6.4 GiB > 1 GiB
        let mut loose = layer(64 * GIB, OsTunables { dirty_background_ratio: 10, ..OsTunables::UNTUNED });
        loose.accumulate_dirty(GIB);
        assert!(!loose.background_drain_active);
    }

    #[test]
    fn background_drain_never_opens_a_window() {
        let mut l = layer(64 * GIB, OsTunables::TUNED);
        l.accumulate_dirty(GIB);
        l.background_tick(SimDuration::from_millis(100));
        assert!(l.dirty_bytes < GIB);
        assert!(l.windows.is_empty());
        assert!(!l.is_contended(SimTime::ZERO));
    }

    #[test]
    fn empty_burst_opens_nothing() {
        let mut l = layer(64 * GIB, OsTunables::UNTUNED);
        assert_eq!(l.begin_writeback_burst(SimTime::from_secs(1), 0), SimDuration::ZERO);
        assert!(!l.is_contended(SimTime::from_secs(1)));
    }

    #[test]
    fn bytes_under_writeback_count_against_the_cap() {
        // cap 1.28 GiB; the first burst fills it, a second one at once adds nothing
        let mut l = layer(64 * GIB, OsTunables::TUNED);
        let first = l.begin_writeback_burst(SimTime::ZERO, 3 * GIB);
        assert_eq!(l.begin_writeback_burst(SimTime::ZERO, 3 * GIB), SimDuration::ZERO);
        // half drained: room for half the cap again
        let half = SimTime::ZERO + SimDuration::from_nanos(first.as_nanos() / 2);
        let second = l.begin_writeback_burst(half, 3 * GIB);
        assert!((second.as_nanos() as i64 - (first.as_nanos() / 2) as i64).abs() <= 2, "{second:?} vs {first:?}");
        assert_eq!(l.contention_until, SimTime::ZERO + first + second);
    }

    #[test]
    fn uncapped_burst_window() {
        let mut l = layer(64 * GIB, OsTunables { dirty_ratio: 40, ..OsTunables::UNTUNED });
        assert_eq!(l.begin_writeback_burst(SimTime::ZERO, 3 * GIB), SimDuration::from_secs(3));
        assert_eq!(l.dirty_bytes, 0);
    }

    #[test]
    fn capped_burst_window() {
        let mut l = layer(64 * GIB, OsTunables { dirty_ratio: 2, dirty_background_ratio: 1, ..OsTunables::UNTUNED });
        // cap = 2% of 64 GiB = 1.28 GiB
        assert_eq!(l.begin_writeback_burst(SimTime::ZERO, 3 * GIB), SimDuration::from_millis(1280));
    }

    #[test]
    fn lower_dirty_ratio_never_lengthens_window() {
        for gib_tenths in [1u64, 5, 10, 30, 100, 400] {
            let bytes = gib_tenths * GIB / 10;
            let mut tight = layer(64 * GIB, OsTunables::TUNED);
            let mut loose = layer(64 * GIB, OsTunables::UNTUNED);
            assert!(tight.begin_writeback_burst(SimTime::ZERO, bytes) <= loose.begin_writeback_burst(SimTime::ZERO, bytes));
        }
    }

    #[test]
    fn tunables_validation() {
        assert!(OsTunables::TUNED.validate().is_ok());
        assert!(OsTunables { dirty_background_ratio: 0, ..OsTunables::TUNED }.validate().is_err());
        assert!(OsTunables { dirty_background_ratio: 5, dirty_ratio: 2, ..OsTunables::TUNED }.validate().is_err());
        assert!(OsTunables { dirty_ratio: 101, ..OsTunables::UNTUNED }.validate().is_err());
    }
}
