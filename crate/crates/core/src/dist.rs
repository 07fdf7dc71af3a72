//! Latency distributions shared by the component models.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::time::SimDuration;

/// Lognormal latency described by its median and log-space spread.
///
/// A zero median is the degenerate "no delay" model; a zero sigma always
/// returns the median.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogNormalLatency {
    pub median: SimDuration,
    pub sigma: f64,
}

impl LogNormalLatency {
    pub fn new(median: SimDuration, sigma: f64) -> Self {
        LogNormalLatency { median, sigma }
    }

    pub fn fixed(value: SimDuration) -> Self {
        LogNormalLatency { median: value, sigma: 0.0 }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SimDuration {
        if self.median.is_zero() {
            return SimDuration::ZERO;
        }
        if self.sigma <= 0.0 {
            return self.median;
        }
        let z: f64 = StandardNormal.sample(rng);
        SimDuration::from_nanos_f64(self.median.as_nanos() as f64 * (self.sigma * z).exp())
    }
}
