//! Stop-the-world collector pauses.
//!
//! A pause freezes event delivery on one process; the latency cost is not
//! added anywhere directly but emerges from the delayed events.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::dist::LogNormalLatency;
use crate::engine::SimRng;
use crate::time::{SimDuration, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GcKind {
    G1Like,
    ZgcLike,
    None,
}

impl GcKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GcKind::G1Like => "g1_like",
            GcKind::ZgcLike => "zgc_like",
            GcKind::None => "none",
        }
    }
}

impl fmt::Display for GcKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GcKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "g1_like" => Ok(GcKind::G1Like),
            "zgc_like" => Ok(GcKind::ZgcLike),
            "none" => Ok(GcKind::None),
            other => Err(format!("unknown gc kind '{other}' (g1_like, zgc_like, none)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcModel {
    pub kind: GcKind,
    pub heap_gb: f64,
    pub pause_p50: SimDuration,
    pub pause_max: SimDuration,
    pub mean_interval: SimDuration,
    /// Share of pauses drawn from the top 3% of the range just below `pause_max`.
    pub tail_fraction: f64,
    /// Log-space spread of ordinary pauses.
    pub body_sigma: f64,
}

/// Fraction of `pause_max` where tail draws begin.
const TAIL_FLOOR: f64 = 0.97;

impl GcModel {
    /// Region-based collector; pause magnitudes scale with the heap relative
    /// to a 32 GB reference whose worst pauses sit in 213-220 ms.
    pub fn g1_like(heap_gb: f64) -> Self {
        let scale = heap_gb / 32.0;
        GcModel {
            kind: GcKind::G1Like,
            heap_gb,
            pause_p50: SimDuration::from_millis_f64(20.0 * scale),
            pause_max: SimDuration::from_millis_f64(220.0 * scale),
            mean_interval: SimDuration::from_secs(30),
            tail_fraction: 0.01,
            body_sigma: 1.0,
        }
    }

    /// Concurrent collector: pauses are safepoint-sized, always under 1 ms.
    pub fn zgc_like(heap_gb: f64) -> Self {
        GcModel {
            kind: GcKind::ZgcLike,
            heap_gb,
            pause_p50: SimDuration::from_micros(100),
            pause_max: SimDuration::from_micros(900),
            mean_interval: SimDuration::from_secs(5),
            tail_fraction: 0.0,
            body_sigma: 0.5,
        }
    }

    pub fn none() -> Self {
        GcModel {
            kind: GcKind::None,
            heap_gb: 0.0,
            pause_p50: SimDuration::ZERO,
            pause_max: SimDuration::ZERO,
            mean_interval: SimDuration::ZERO,
            tail_fraction: 0.0,
            body_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.kind == GcKind::None {
            return Ok(());
        }
        if self.mean_interval.is_zero() {
            return Err("gc mean_interval must be > 0".into());
        }
        if self.pause_p50 > self.pause_max {
            return Err(format!("gc pause_p50 ({}) exceeds pause_max ({})", self.pause_p50, self.pause_max));
        }
        if !(0.0..=1.0).contains(&self.tail_fraction) {
            return Err(format!("gc tail_fraction {} outside [0, 1]", self.tail_fraction));
        }
        if self.body_sigma.is_nan() || self.body_sigma < 0.0 {
            return Err("gc body_sigma must be >= 0".into());
        }
        Ok(())
    }

    fn draw_length(&self, rng: &mut SimRng) -> SimDuration {
        let max = self.pause_max.as_nanos();
        if self.tail_fraction > 0.0 && rng.random_bool(self.tail_fraction) {
            let lo = (max as f64 * TAIL_FLOOR) as u64;
            return SimDuration::from_nanos(rng.random_range(lo..=max));
        }
        let v = LogNormalLatency::new(self.pause_p50, self.body_sigma).sample(rng);
        SimDuration::from_nanos(v.as_nanos().min(max))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GcPause {
    /// Offset from the previous pause (or from the start).
    pub after: SimDuration,
    pub length: SimDuration,
}

/// Next pause of `model`: exponential gap with mean `mean_interval`, and a
/// length that is lognormal around `pause_p50`, capped at `pause_max`, with a
/// `tail_fraction` of draws placed near the cap. `None` for `kind = none`.
pub fn next_pause(model: &GcModel, rng: &mut SimRng) -> Option<GcPause> {
    if model.kind == GcKind::None || model.mean_interval.is_zero() {
        return None;
    }
    let exp = Exp::new(1.0 / model.mean_interval.as_nanos() as f64).ok()?;
    let after = SimDuration::from_nanos_f64(exp.sample(rng));
    Some(GcPause { after, length: model.draw_length(rng) })
}

/// Absolute `(start, length)` pauses starting before `horizon`. Pauses never
/// overlap: the next gap is measured from the end of the previous pause.
pub fn pause_schedule(model: &GcModel, horizon: SimTime, rng: &mut SimRng) -> Vec<(SimTime, SimDuration)> {
    let mut out = Vec::new();
    let mut cursor = SimTime::ZERO;
    while let Some(p) = next_pause(model, rng) {
        let start = cursor + p.after;
        if start >= horizon {
            break;
        }
        out.push((start, p.length));
        cursor = start + p.length;
    }
    out
}
