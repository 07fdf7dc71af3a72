//! Virtual time and the unit grammar used by scenario files.
//!
//! All simulated time is integer nanoseconds. Millisecond literals in scenario
//! files convert exactly (`1ms` is 1,000,000 ticks); a literal that does not
//! land on a whole nanosecond is rejected rather than rounded.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

pub const NANOS_PER_MICRO: u64 = 1_000;
pub const NANOS_PER_MILLI: u64 = 1_000_000;
pub const NANOS_PER_SEC: u64 = 1_000_000_000;

/// Instant on the simulation clock, in nanoseconds since start.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

/// Non-negative span of virtual time, in nanoseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimDuration(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * NANOS_PER_MICRO)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * NANOS_PER_MILLI)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * NANOS_PER_SEC)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_MILLI as f64
    }

    /// Elapsed time since `earlier`, zero if `earlier` is in the future.
    pub fn saturating_since(self, earlier: SimTime) -> SimDuration {
        SimDuration(self.0.saturating_sub(earlier.0))
    }
}

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration(0);

    pub const fn from_nanos(ns: u64) -> Self {
        SimDuration(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimDuration(us * NANOS_PER_MICRO)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimDuration(ms * NANOS_PER_MILLI)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimDuration(s * NANOS_PER_SEC)
    }

    /// Rounds to the nearest nanosecond; negative and NaN inputs clamp to zero.
    pub fn from_millis_f64(ms: f64) -> Self {
        Self::from_nanos_f64(ms * NANOS_PER_MILLI as f64)
    }

    pub fn from_secs_f64(s: f64) -> Self {
        Self::from_nanos_f64(s * NANOS_PER_SEC as f64)
    }

    pub fn from_nanos_f64(ns: f64) -> Self {
        if ns.is_nan() || ns <= 0.0 {
            SimDuration(0)
        } else if ns >= u64::MAX as f64 {
            SimDuration(u64::MAX)
        } else {
            SimDuration(ns.round() as u64)
        }
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_MILLI as f64
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl Add<SimDuration> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimDuration) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign<SimDuration> for SimTime {
    fn add_assign(&mut self, rhs: SimDuration) {
        self.0 = self.0.saturating_add(rhs.0);
    }
}

impl Add for SimDuration {
    type Output = SimDuration;
    fn add(self, rhs: SimDuration) -> SimDuration {
        SimDuration(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for SimDuration {
    fn add_assign(&mut self, rhs: SimDuration) {
        self.0 = self.0.saturating_add(rhs.0);
    }
}

impl Sub for SimTime {
    type Output = SimDuration;
    /// Panics in debug builds if `rhs` is later than `self`.
    fn sub(self, rhs: SimTime) -> SimDuration {
        debug_assert!(self.0 >= rhs.0, "negative duration {} - {}", self.0, rhs.0);
        SimDuration(self.0.saturating_sub(rhs.0))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", format_duration(SimDuration(self.0)))
    }
}

impl fmt::Display for SimDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", format_duration(*self))
    }
}

/// Parses an unsigned decimal literal and scales it by `unit`, requiring an
/// exact integer result.
fn scale_decimal(num: &str, unit: u128) -> Result<u128, String> {
    let num = num.trim();
    if num.is_empty() {
        return Err("missing number".into());
    }
    let (int_part, frac_part) = match num.split_once('.') {
        Some((i, f)) => (i, f),
        None => (num, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(format!("invalid number '{num}'"));
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return Err(format!("invalid number '{num}'"));
    }
    if frac_part.len() > 18 {
        return Err(format!("too many decimal places in '{num}'"));
    }
    let digits: String = format!("{int_part}{frac_part}");
    let mantissa: u128 = if digits.is_empty() {
        0
    } else {
        digits.parse().map_err(|_| format!("number out of range '{num}'"))?
    };
    let denom = 10u128.pow(frac_part.len() as u32);
    let scaled = mantissa.checked_mul(unit).ok_or_else(|| format!("number out of range '{num}'"))?;
    if scaled % denom != 0 {
        return Err(format!("'{num}' is not a whole number of base units"));
    }
    Ok(scaled / denom)
}

fn split_suffix<'a>(text: &'a str, suffixes: &[(&'static str, u128)]) -> Option<(&'a str, u128)> {
    // longest suffix first so that "ms" wins over "s"
    let mut best: Option<(&str, u128, usize)> = None;
    for (sfx, unit) in suffixes {
        if text.ends_with(sfx) && best.is_none_or(|(_, _, len)| sfx.len() > len) {
            best = Some((&text[..text.len() - sfx.len()], *unit, sfx.len()));
        }
    }
    best.map(|(n, u, _)| (n, u))
}

const DURATION_UNITS: &[(&str, u128)] = &[
    ("ns", 1),
    ("us", NANOS_PER_MICRO as u128),
    ("ms", NANOS_PER_MILLI as u128),
    ("s", NANOS_PER_SEC as u128),
    ("m", 60 * NANOS_PER_SEC as u128),
];

/// Parses `250us`, `0.02ms`, `30s`, `10m`.
pub fn parse_duration(text: &str) -> Result<SimDuration, String> {
    let t = text.trim();
    let (num, unit) =
        split_suffix(t, DURATION_UNITS).ok_or_else(|| format!("duration '{t}' needs a unit (ns, us, ms, s, m)"))?;
    let ns = scale_decimal(num, unit)?;
    u64::try_from(ns).map(SimDuration).map_err(|_| format!("duration '{t}' out of range"))
}

/// Shortest exact rendering: whole seconds as `Ns`, otherwise milliseconds
/// with as many decimals as needed.
pub fn format_duration(d: SimDuration) -> String {
    let ns = d.0;
    if ns == 0 {
        return "0ms".into();
    }
    if ns.is_multiple_of(NANOS_PER_SEC) {
        return format!("{}s", ns / NANOS_PER_SEC);
    }
    let whole = ns / NANOS_PER_MILLI;
    let frac = ns % NANOS_PER_MILLI;
    if frac == 0 {
        format!("{whole}ms")
    } else {
        let mut f = format!("{frac:06}");
        while f.ends_with('0') {
            f.pop();
        }
        format!("{whole}.{f}ms")
    }
}

const BYTE_UNITS: &[(&str, u128)] = &[
    ("B", 1),
    ("KiB", 1 << 10),
    ("MiB", 1 << 20),
    ("GiB", 1 << 30),
    ("TiB", 1 << 40),
    ("KB", 1_000),
    ("MB", 1_000_000),
    ("GB", 1_000_000_000),
];

/// Parses `700B`, `1.5GiB`, `64GiB`, `48MiB`.
pub fn parse_bytes(text: &str) -> Result<u64, String> {
    let t = text.trim();
    let (num, unit) = split_suffix(t, BYTE_UNITS).ok_or_else(|| format!("byte size '{t}' needs a unit (B, KiB, MiB, GiB)"))?;
    let b = scale_decimal(num, unit)?;
    u64::try_from(b).map_err(|_| format!("byte size '{t}' out of range"))
}

pub fn format_bytes(b: u64) -> String {
    for (sfx, unit) in [("GiB", 1u64 << 30), ("MiB", 1 << 20), ("KiB", 1 << 10)] {
        if b >= unit && b.is_multiple_of(unit) {
            return format!("{}{sfx}", b / unit);
        }
    }
    format!("{b}B")
}

/// Parses a byte rate such as `1GiB/s`.
pub fn parse_byte_rate(text: &str) -> Result<u64, String> {
    let t = text.trim();
    let base = t.strip_suffix("/s").ok_or_else(|| format!("byte rate '{t}' must end in /s"))?;
    parse_bytes(base)
}

pub fn format_byte_rate(b: u64) -> String {
    format!("{}/s", format_bytes(b))
}

const BANDWIDTH_UNITS: &[(&str, u128)] = &[
    ("bps", 1),
    ("Kbps", 1_000),
    ("Mbps", 1_000_000),
    ("Gbps", 1_000_000_000),
];

/// Parses link bandwidth in bits per second: `100Mbps`, `10Gbps`.
pub fn parse_bandwidth(text: &str) -> Result<u64, String> {
    let t = text.trim();
    let (num, unit) = split_suffix(t, BANDWIDTH_UNITS).ok_or_else(|| format!("bandwidth '{t}' needs a unit (bps, Kbps, Mbps, Gbps)"))?;
    let b = scale_decimal(num, unit)?;
    u64::try_from(b).map_err(|_| format!("bandwidth '{t}' out of range"))
}

pub fn format_bandwidth(bps: u64) -> String {
    for (sfx, unit) in [("Gbps", 1_000_000_000u64), ("Mbps", 1_000_000), ("Kbps", 1_000)] {
        if bps >= unit && bps.is_multiple_of(unit) {
            return format!("{}{sfx}", bps / unit);
        }
    }
    format!("{bps}bps")
}
