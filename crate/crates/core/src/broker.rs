//! Publish path pieces owned by a broker: ensemble fan-out, quorum
//! acknowledgement, NIC serialization and the dispatch draw.

use crate::dist::LogNormalLatency;
use crate::time::{SimDuration, SimTime, NANOS_PER_SEC};

/// Default payload size of benchmark-replay scenarios: 8.4 Gbps spread over
/// ~1.5M msg/s is ~700 bytes per message.
pub const DEFAULT_MESSAGE_SIZE: u64 = 700;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnsembleConfig {
    pub e: u32,
    pub qw: u32,
    pub qa: u32,
}

impl EnsembleConfig {
    pub fn new(e: u32, qw: u32, qa: u32) -> Result<Self, String> {
        let c = EnsembleConfig { e, qw, qa };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.e >= self.qw && self.qw >= self.qa && self.qa >= 1) {
            return Err(format!("ensemble requires e >= qw >= qa >= 1 (got e={}, qw={}, qa={})", self.e, self.qw, self.qa));
        }
        Ok(())
    }

    /// Ensemble positions written for entry `entry`: `qw` consecutive
    /// positions starting at `entry mod e`.
    pub fn write_set(&self, entry: u64) -> impl Iterator<Item = u32> + '_ {
        let start = (entry % self.e as u64) as u32;
        (0..self.qw).map(move |i| (start + i) % self.e)
    }
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { e: 3, qw: 2, qa: 2 }
    }
}

/// The `qa`-th smallest value of `acks` (1-based), or `None` if there are
/// fewer than `qa` acks.
pub fn quorum_ack<T: Copy + Ord>(acks: &[T], qa: u32) -> Option<T> {
    if qa == 0 || acks.len() < qa as usize {
        return None;
    }
    let mut v = acks.to_vec();
    let (_, nth, _) = v.select_nth_unstable(qa as usize - 1);
    Some(*nth)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NicModel {
    /// Bits per second.
    pub bandwidth: u64,
    pub base_rtt: SimDuration,
}

impl NicModel {
    pub fn validate(&self) -> Result<(), String> {
        if self.bandwidth == 0 {
            return Err("nic bandwidth must be > 0".into());
        }
        Ok(())
    }

    /// Time to put `bytes` on the wire, rounded up to a whole nanosecond.
    pub fn serialization(&self, bytes: u64) -> SimDuration {
        let bits = bytes as u128 * 8;
        SimDuration::from_nanos((bits * NANOS_PER_SEC as u128).div_ceil(self.bandwidth as u128) as u64)
    }

    pub fn one_way(&self) -> SimDuration {
        SimDuration::from_nanos(self.base_rtt.as_nanos() / 2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transmission {
    pub start: SimTime,
    pub depart: SimTime,
    pub bits: u64,
}

/// FIFO egress link. A transmission starts when the previous one has left.
#[derive(Clone, Debug)]
pub struct NicLink {
    pub model: NicModel,
    pub free_at: SimTime,
    pub bits_sent: u64,
    pub transmissions: u64,
}

impl NicLink {
    pub fn new(model: NicModel) -> Self {
        NicLink { model, free_at: SimTime::ZERO, bits_sent: 0, transmissions: 0 }
    }

    pub fn transmit(&mut self, now: SimTime, bytes: u64) -> Transmission {
        let start = self.free_at.max(now);
        let depart = start + self.model.serialization(bytes);
        self.free_at = depart;
        self.bits_sent += bytes * 8;
        self.transmissions += 1;
        Transmission { start, depart, bits: bytes * 8 }
    }

    /// Queueing delay a transmission issued at `now` would see.
    pub fn backlog(&self, now: SimTime) -> SimDuration {
        self.free_at.saturating_since(now)
    }
}

/// A published message, compactly: the key is identified by its index in the
/// producer's key space plus its routing hash.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Message {
    pub id: u64,
    pub producer: u32,
    pub key: u32,
    pub key_hash: u32,
    pub size: u64,
    pub publish_at: SimTime,
}

impl Message {
    pub fn validate(&self) -> Result<(), String> {
        if self.size == 0 {
            return Err("message size must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PublishResult {
    pub latency: SimDuration,
    pub acked: bool,
}

/// Broker request handling before replication.
pub type BrokerProcessing = LogNormalLatency;

/// Broker-to-consumer processing plus delivery after the publish ack.
pub type DispatchPath = LogNormalLatency;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ensemble_invariant() {
        assert!(EnsembleConfig::new(3, 2, 2).is_ok());
        assert!(EnsembleConfig::new(3, 2, 3).is_err());
        assert!(EnsembleConfig::new(2, 3, 1).is_err());
        assert!(EnsembleConfig::new(1, 1, 0).is_err());
    }

    #[test]
    fn write_set_round_robin() {
        let c = EnsembleConfig::new(3, 2, 2).unwrap();
        let sets: Vec<Vec<u32>> = (0..4).map(|i| c.write_set(i).collect()).collect();
        assert_eq!(sets, vec![vec![0, 1], vec![1, 2], vec![2, 0], vec![0, 1]]);
    }

    #[test]
    fn quorum_order_statistic() {
        let acks = [SimDuration::from_millis(9), SimDuration::from_millis(1), SimDuration::from_millis(3)];
        assert_eq!(quorum_ack(&acks, 2), Some(SimDuration::from_millis(3)));
        assert_eq!(quorum_ack(&acks, 1), Some(SimDuration::from_millis(1)));
        assert_eq!(quorum_ack(&acks[..1], 2), None);
    }

    #[test]
    fn serialization_of_700_bytes_at_10g() {
        let nic = NicModel { bandwidth: 10_000_000_000, base_rtt: SimDuration::ZERO };
        assert_eq!(nic.serialization(700), SimDuration::from_nanos(560));
    }

    #[test]
    fn link_queues_fifo() {
        let mut l = NicLink::new(NicModel { bandwidth: 8_000, base_rtt: SimDuration::ZERO });
        // 1 byte = 1 ms at 8 kbps
        let a = l.transmit(SimTime::ZERO, 2);
        let b = l.transmit(SimTime::ZERO, 1);
        assert_eq!(a.depart, SimTime::from_millis(2));
        assert_eq!(b.start, a.depart);
        assert_eq!(b.depart, SimTime::from_millis(3));
        let c = l.transmit(SimTime::from_millis(10), 1);
        assert_eq!(c.start, SimTime::from_millis(10));
    }

    #[test]
    fn saturated_link_achieves_bandwidth() {
        let bw = 100_000_000;
        let mut l = NicLink::new(NicModel { bandwidth: bw, base_rtt: SimDuration::ZERO });
        // offer 110% for 1 s
        let size = 700u64;
        let per_sec = bw * 11 / 10 / (size * 8);
        let gap = NANOS_PER_SEC / per_sec;
        let mut departed_bits = 0;
        for i in 0..per_sec {
            let t = l.transmit(SimTime::from_nanos(i * gap), size);
            if t.depart <= SimTime::from_secs(1) {
                departed_bits += t.bits;
            }
        }
        let ratio = departed_bits as f64 / bw as f64;
        assert!(ratio <= 1.0 && ratio > 0.99, "ratio {ratio}");
        assert!(l.backlog(SimTime::from_secs(1)) > SimDuration::ZERO);
    }

    #[test]
    fn link_below_cap_has_no_queue() {
        for bw in [10_000_000_000u64, 25_000_000_000] {
            let mut l = NicLink::new(NicModel { bandwidth: bw, base_rtt: SimDuration::ZERO });
            for i in 0..1000u64 {
                let t = l.transmit(SimTime::from_micros(10 * i), 700);
                assert_eq!(t.start, SimTime::from_micros(10 * i));
            }
        }
    }
}
