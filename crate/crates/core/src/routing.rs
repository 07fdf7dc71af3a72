//! Key routing: federation of partition ranges across clusters, Key_Shared
//! consumer hash-range assignment, and splittable namespace bundles.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use crate::error::SimError;

/// 32-bit FNV-1a over the key bytes.
///
/// Test vectors: `""` → `0x811c9dc5`, `"a"` → `0xe40c292c`,
/// `"foobar"` → `0xbf9cf968`.
pub fn stable_hash(key: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for &b in key {
        h ^= b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

/// Position of a key in the 16-bit Key_Shared hash space.
pub fn stable_hash_16(key: &[u8]) -> u16 {
    (stable_hash(key) % HASH_SPACE) as u16
}

pub const HASH_SPACE: u32 = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RoutingMode {
    /// partition = stable_hash(key) mod total_partitions.
    #[default]
    Hash,
    /// Keys of the form `<cluster>/<rest>` go to that cluster's range,
    /// hashed within it; other keys fall back to `Hash`.
    Prefix,
}

impl RoutingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RoutingMode::Hash => "hash",
            RoutingMode::Prefix => "prefix",
        }
    }
}

impl fmt::Display for RoutingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoutingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hash" => Ok(RoutingMode::Hash),
            "prefix" => Ok(RoutingMode::Prefix),
            other => Err(format!("unknown routing mode '{other}' (hash, prefix)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionRange {
    pub cluster: String,
    pub lo: u32,
    /// Inclusive.
    pub hi: u32,
}

impl PartitionRange {
    /// Number of partitions in the range.
    pub fn width(&self) -> u32 {
        self.hi - self.lo + 1
    }

    pub fn contains(&self, p: u32) -> bool {
        (self.lo..=self.hi).contains(&p)
    }
}

/// Static partition-range → cluster assignment. Construction guarantees the
/// ranges exactly cover `[0, total_partitions)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FederationMap {
    total_partitions: u32,
    ranges: Vec<PartitionRange>,
    mode: RoutingMode,
}

impl FederationMap {
    pub fn new(total_partitions: u32, mut ranges: Vec<PartitionRange>, mode: RoutingMode) -> Result<Self, String> {
        if total_partitions == 0 {
            return Err("total_partitions must be > 0".into());
        }
        if ranges.is_empty() {
            return Err("federation map has no ranges".into());
        }
        ranges.sort_by_key(|r| r.lo);
        let mut next = 0u32;
        for r in &ranges {
            if r.lo > r.hi {
                return Err(format!("range {}-{} for {} is reversed", r.lo, r.hi, r.cluster));
            }
            if r.lo > next {
                return Err(format!("partitions {}-{} are not assigned to any cluster", next, r.lo - 1));
            }
            if r.lo < next {
                return Err(format!("range {}-{} for {} overlaps an earlier range", r.lo, r.hi, r.cluster));
            }
            next = r.hi + 1;
        }
        if next != total_partitions {
            return Err(format!("ranges cover [0, {next}) but the topic has {total_partitions} partitions"));
        }
        let mut seen = std::collections::HashSet::new();
        for r in &ranges {
            if !seen.insert(&r.cluster) {
                return Err(format!("cluster {} appears in more than one range", r.cluster));
            }
        }
        Ok(FederationMap { total_partitions, ranges, mode })
    }

    /// One cluster owning every partition.
    pub fn single(cluster: &str, total_partitions: u32) -> Self {
        FederationMap::new(
            total_partitions,
            vec![PartitionRange { cluster: cluster.to_string(), lo: 0, hi: total_partitions - 1 }],
            RoutingMode::Hash,
        )
        .expect("single-range map is a cover")
    }

    pub fn total_partitions(&self) -> u32 {
        self.total_partitions
    }

    pub fn ranges(&self) -> &[PartitionRange] {
        &self.ranges
    }

    pub fn mode(&self) -> RoutingMode {
        self.mode
    }

    /// Index into `ranges()` of the range owning `partition`.
    pub fn range_of(&self, partition: u32) -> usize {
        self.ranges.partition_point(|r| r.hi < partition)
    }

    pub fn cluster_of(&self, partition: u32) -> &str {
        &self.ranges[self.range_of(partition)].cluster
    }

    /// `(range index, partition)` for `key`.
    pub fn route(&self, key: &[u8]) -> (usize, u32) {
        if self.mode == RoutingMode::Prefix {
            if let Some(slash) = key.iter().position(|&b| b == b'/') {
                let prefix = &key[..slash];
                if let Some(i) = self.ranges.iter().position(|r| r.cluster.as_bytes() == prefix) {
                    let r = &self.ranges[i];
                    return (i, r.lo + stable_hash(key) % r.width());
                }
            }
        }
        let p = stable_hash(key) % self.total_partitions;
        (self.range_of(p), p)
    }
}

pub type ConsumerId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HashRange {
    pub lo: u32,
    /// Inclusive.
    pub hi: u32,
    pub consumer: ConsumerId,
}

impl HashRange {
    fn len(&self) -> u32 {
        self.hi - self.lo + 1
    }
}

/// Key_Shared assignment of the 16-bit hash space to consumers.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeySharedState {
    ranges: Vec<HashRange>,
}

impl KeySharedState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ranges(&self) -> &[HashRange] {
        &self.ranges
    }

    pub fn consumers(&self) -> Vec<ConsumerId> {
        let mut v: Vec<ConsumerId> = self.ranges.iter().map(|r| r.consumer).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn assign(&self, hash16: u16) -> Result<ConsumerId, SimError> {
        let h = hash16 as u32;
        let i = self.ranges.partition_point(|r| r.hi < h);
        self.ranges.get(i).map(|r| r.consumer).ok_or(SimError::NoConsumers)
    }

    pub fn assign_key(&self, key: &[u8]) -> Result<ConsumerId, SimError> {
        self.assign(stable_hash_16(key))
    }

    /// The largest range (lowest `lo` on ties) splits at its midpoint and the
    /// new consumer takes the upper half.
    pub fn join(&mut self, consumer: ConsumerId) -> Result<(), SimError> {
        if self.ranges.iter().any(|r| r.consumer == consumer) {
            return Err(SimError::Invariant(format!("consumer {consumer} joined twice")));
        }
        if self.ranges.is_empty() {
            self.ranges.push(HashRange { lo: 0, hi: HASH_SPACE - 1, consumer });
            return Ok(());
        }
        let (idx, widest) = self
            .ranges
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.len().cmp(&b.len()).then(b.lo.cmp(&a.lo)))
            .map(|(i, r)| (i, *r))
            .expect("non-empty");
        if widest.len() < 2 {
            return Err(SimError::Invariant("hash space exhausted".into()));
        }
        let mid = widest.lo + widest.len() / 2;
        self.ranges[idx].hi = mid - 1;
        self.ranges.insert(idx + 1, HashRange { lo: mid, hi: widest.hi, consumer });
        Ok(())
    }

    /// Each range of the departing consumer merges into its left neighbour,
    /// or its right neighbour when it is the first range.
    pub fn leave(&mut self, consumer: ConsumerId) -> Result<(), SimError> {
        if !self.ranges.iter().any(|r| r.consumer == consumer) {
            return Err(SimError::UnknownConsumer(consumer.to_string()));
        }
        let mut out: Vec<HashRange> = Vec::with_capacity(self.ranges.len());
        let mut carry: Option<u32> = None; // lo of leading ranges with no left neighbour
        for r in &self.ranges {
            if r.consumer == consumer {
                match out.last_mut() {
                    Some(prev) => prev.hi = r.hi,
                    None => carry = Some(carry.unwrap_or(r.lo)),
                }
            } else {
                let mut r = *r;
                if let Some(lo) = carry.take() {
                    r.lo = lo;
                }
                out.push(r);
            }
        }
        // coalesce neighbours that now share an owner
        let mut merged: Vec<HashRange> = Vec::with_capacity(out.len());
        for r in out {
            match merged.last_mut() {
                Some(prev) if prev.consumer == r.consumer && prev.hi + 1 == r.lo => prev.hi = r.hi,
                _ => merged.push(r),
            }
        }
        self.ranges = merged;
        Ok(())
    }

    /// Disjoint, ordered, gap-free cover of the hash space (or empty).
    pub fn check_cover(&self) -> Result<(), String> {
        if self.ranges.is_empty() {
            return Ok(());
        }
        let mut next = 0u32;
        for r in &self.ranges {
            if r.lo != next || r.hi < r.lo {
                return Err(format!("range {}-{} breaks the cover at {next}", r.lo, r.hi));
            }
            next = r.hi + 1;
        }
        if next != HASH_SPACE {
            return Err(format!("cover ends at {next}"));
        }
        Ok(())
    }
}

/// Membership change applied to a Key_Shared subscription.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConsumerEvent {
    Join(ConsumerId),
    Leave(ConsumerId),
}

pub fn rebalance(state: &KeySharedState, event: ConsumerEvent) -> Result<KeySharedState, SimError> {
    let mut next = state.clone();
    match event {
        ConsumerEvent::Join(c) => next.join(c)?,
        ConsumerEvent::Leave(c) => next.leave(c)?,
    }
    Ok(next)
}

/// How messages for a key are handed to a new owner after a rebalance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HandoffPolicy {
    /// Hold new messages for a key until the previous owner has delivered
    /// everything it already holds for that key.
    DrainFirst,
    /// Route to the current owner immediately (can reorder a key).
    Immediate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub step: u64,
    pub key: u32,
    pub seq: u64,
    pub consumer: ConsumerId,
}

/// Step-driven Key_Shared dispatcher: every consumer delivers up to
/// `per_step` queued messages per step, and membership may change between
/// steps. Departing consumers finish their queue before going away.
#[derive(Clone, Debug)]
pub struct KeySharedDispatcher {
    pub state: KeySharedState,
    policy: HandoffPolicy,
    per_step: usize,
    queues: BTreeMap<ConsumerId, VecDeque<(u32, u64)>>,
    /// Consumers that left but still hold queued messages.
    draining: BTreeMap<ConsumerId, VecDeque<(u32, u64)>>,
    /// Owner and queued count of each key with undelivered messages.
    holder: HashMap<u32, (ConsumerId, usize)>,
    held: HashMap<u32, VecDeque<u64>>,
    step: u64,
    pub deliveries: Vec<Delivery>,
}

impl KeySharedDispatcher {
    pub fn new(policy: HandoffPolicy, per_step: usize) -> Self {
        KeySharedDispatcher {
            state: KeySharedState::new(),
            policy,
            per_step,
            queues: BTreeMap::new(),
            draining: BTreeMap::new(),
            holder: HashMap::new(),
            held: HashMap::new(),
            step: 0,
            deliveries: Vec::new(),
        }
    }

    pub fn apply(&mut self, event: ConsumerEvent) -> Result<(), SimError> {
        self.state = rebalance(&self.state, event)?;
        match event {
            ConsumerEvent::Join(c) => {
                let carried = self.draining.remove(&c).unwrap_or_default();
                self.queues.insert(c, carried);
            }
            ConsumerEvent::Leave(c) => {
                let q = self.queues.remove(&c).unwrap_or_default();
                if !q.is_empty() {
                    self.draining.insert(c, q);
                }
            }
        }
        Ok(())
    }

    fn key_hash(key: u32) -> u16 {
        stable_hash_16(format!("key-{key}").as_bytes())
    }

    pub fn publish(&mut self, key: u32, seq: u64) -> Result<(), SimError> {
        let owner = self.state.assign(Self::key_hash(key))?;
        if self.policy == HandoffPolicy::DrainFirst {
            let busy_elsewhere = matches!(self.holder.get(&key), Some(&(h, n)) if h != owner && n > 0);
            if busy_elsewhere || self.held.get(&key).is_some_and(|q| !q.is_empty()) {
                self.held.entry(key).or_default().push_back(seq);
                return Ok(());
            }
        }
        self.enqueue(owner, key, seq);
        Ok(())
    }

    fn enqueue(&mut self, consumer: ConsumerId, key: u32, seq: u64) {
        self.queues.entry(consumer).or_default().push_back((key, seq));
        let e = self.holder.entry(key).or_insert((consumer, 0));
        if e.1 == 0 {
            e.0 = consumer;
        }
        e.1 += 1;
    }

    /// One delivery round, then release held keys whose previous owner
    /// has drained.
    pub fn step(&mut self) -> Result<(), SimError> {
        self.step += 1;
        let mut delivered: Vec<(ConsumerId, u32, u64)> = Vec::new();
        for (c, q) in self.queues.iter_mut().chain(self.draining.iter_mut()) {
            for _ in 0..self.per_step {
                let Some((key, seq)) = q.pop_front() else { break };
                delivered.push((*c, key, seq));
            }
        }
        self.draining.retain(|_, q| !q.is_empty());
        for (c, key, seq) in delivered {
            self.deliveries.push(Delivery { step: self.step, key, seq, consumer: c });
            if let Some(e) = self.holder.get_mut(&key) {
                e.1 -= 1;
            }
        }
        self.release_held()
    }

    fn release_held(&mut self) -> Result<(), SimError> {
        let mut keys: Vec<u32> = self.held.iter().filter(|(_, q)| !q.is_empty()).map(|(k, _)| *k).collect();
        keys.sort_unstable();
        for key in keys {
            if self.holder.get(&key).is_some_and(|&(_, n)| n > 0) {
                continue;
            }
            let owner = self.state.assign(Self::key_hash(key))?;
            let q = self.held.remove(&key).unwrap_or_default();
            for seq in q {
                self.enqueue(owner, key, seq);
            }
        }
        Ok(())
    }

    pub fn pending(&self) -> usize {
        self.queues.values().chain(self.draining.values()).map(VecDeque::len).sum::<usize>()
            + self.held.values().map(VecDeque::len).sum::<usize>()
    }
}

/// First `(key, earlier seq, later seq)` where a key's deliveries go
/// backwards, scanning deliveries in order.
pub fn first_order_violation(deliveries: &[Delivery]) -> Option<(u32, u64, u64)> {
    let mut last: HashMap<u32, u64> = HashMap::new();
    for d in deliveries {
        if let Some(&prev) = last.get(&d.key) {
            if d.seq <= prev {
                return Some((d.key, prev, d.seq));
            }
        }
        last.insert(d.key, d.seq);
    }
    None
}

pub const DEFAULT_NUM_BUNDLES: u32 = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub id: u32,
    pub hash_lo: u32,
    /// Inclusive.
    pub hash_hi: u32,
    /// Messages per second observed over the last interval.
    pub load: f64,
    pub split_threshold: f64,
    pub broker: u32,
}

impl Bundle {
    pub fn span(&self) -> u32 {
        self.hash_hi - self.hash_lo + 1
    }
}

/// Splits `bundle` at its hash midpoint when its load exceeds the threshold.
/// Children inherit half the range and half the load estimate.
pub fn bundle_tick(bundle: &Bundle, next_ids: (u32, u32)) -> Option<(Bundle, Bundle)> {
    if bundle.load <= bundle.split_threshold || bundle.span() < 2 {
        return None;
    }
    let mid = bundle.hash_lo + bundle.span() / 2;
    let half = bundle.load / 2.0;
    Some((
        Bundle { id: next_ids.0, hash_hi: mid - 1, load: half, ..bundle.clone() },
        Bundle { id: next_ids.1, hash_lo: mid, load: half, ..bundle.clone() },
    ))
}

/// The bundles of one namespace and their broker placement.
#[derive(Clone, Debug, PartialEq)]
pub struct Namespace {
    pub bundles: Vec<Bundle>,
    pub brokers: u32,
    next_id: u32,
    counts: Vec<u64>,
}

impl Namespace {
    pub fn new(num_bundles: u32, split_threshold: f64, brokers: u32) -> Result<Self, String> {
        if num_bundles == 0 || num_bundles > HASH_SPACE || !HASH_SPACE.is_multiple_of(num_bundles) {
            return Err(format!("num_bundles must divide {HASH_SPACE} (got {num_bundles})"));
        }
        if brokers == 0 {
            return Err("namespace needs at least one broker".into());
        }
        let span = HASH_SPACE / num_bundles;
        let bundles = (0..num_bundles)
            .map(|i| Bundle {
                id: i,
                hash_lo: i * span,
                hash_hi: (i + 1) * span - 1,
                load: 0.0,
                split_threshold,
                broker: i % brokers,
            })
            .collect();
        Ok(Namespace { bundles, brokers, next_id: num_bundles, counts: vec![0; num_bundles as usize] })
    }

    pub fn bundle_of(&self, hash16: u16) -> usize {
        self.bundles.partition_point(|b| b.hash_hi < hash16 as u32)
    }

    pub fn observe(&mut self, hash16: u16) {
        let i = self.bundle_of(hash16);
        self.counts[i] += 1;
    }

    fn broker_loads(&self) -> Vec<f64> {
        let mut loads = vec![0.0; self.brokers as usize];
        for b in &self.bundles {
            loads[b.broker as usize] += b.load;
        }
        loads
    }

    /// Closes an observation interval of `interval_secs`: updates load
    /// estimates, splits overloaded bundles, and moves each split's upper
    /// child to the least-loaded broker. Returns the number of splits.
    pub fn tick(&mut self, interval_secs: f64) -> usize {
        for (b, c) in self.bundles.iter_mut().zip(&self.counts) {
            b.load = *c as f64 / interval_secs;
        }
        let mut out = Vec::with_capacity(self.bundles.len());
        let mut moved = Vec::new();
        let old = std::mem::take(&mut self.bundles);
        for b in old {
            match bundle_tick(&b, (self.next_id, self.next_id + 1)) {
                Some((lo, hi)) => {
                    self.next_id += 2;
                    out.push(lo);
                    moved.push(out.len());
                    out.push(hi);
                }
                None => out.push(b),
            }
        }
        self.bundles = out;
        for &i in &moved {
            let loads = self.broker_loads();
            self.bundles[i].broker = loads
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
                .map(|(b, _)| b as u32)
                .unwrap_or(0);
        }
        let splits = moved.len();
        self.counts = vec![0; self.bundles.len()];
        splits
    }

    pub fn check_cover(&self) -> Result<(), String> {
        let mut next = 0;
        for b in &self.bundles {
            if b.hash_lo != next {
                return Err(format!("bundle {} starts at {} (expected {next})", b.id, b.hash_lo));
            }
            next = b.hash_hi + 1;
        }
        if next != HASH_SPACE {
            return Err(format!("bundles end at {next}"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_map() -> FederationMap {
        let r = |c: &str, lo, hi| PartitionRange { cluster: c.into(), lo, hi };
        FederationMap::new(
            128,
            vec![r("cluster-1", 0, 25), r("cluster-2", 26, 51), r("cluster-3", 52, 77), r("cluster-4", 78, 102), r("cluster-5", 103, 127)],
            RoutingMode::Hash,
        )
        .unwrap()
    }

    #[test]
    fn fnv_vectors() {
        assert_eq!(stable_hash(b""), 0x811c_9dc5);
        assert_eq!(stable_hash(b"a"), 0xe40c_292c);
        assert_eq!(stable_hash(b"foobar"), 0xbf9c_f968);
    }

    #[test]
    fn single_partition_routes_everything_to_zero() {
        let m = FederationMap::single("c", 1);
        for k in ["a", "b", "acct-99"] {
            assert_eq!(m.route(k.as_bytes()).1, 0);
        }
    }

    #[test]
    fn partition_13_is_cluster_1() {
        let m = paper_map();
        assert_eq!(m.cluster_of(13), "cluster-1");
        let key = (0..).map(|i| format!("acct-{i}")).find(|k| stable_hash(k.as_bytes()) % 128 == 13).unwrap();
        let (r, p) = m.route(key.as_bytes());
        assert_eq!(p, 13);
        assert_eq!(m.ranges()[r].cluster, "cluster-1");
    }

    #[test]
    fn rejects_gaps_and_overlaps() {
        let r = |c: &str, lo, hi| PartitionRange { cluster: c.into(), lo, hi };
        assert!(FederationMap::new(10, vec![r("a", 0, 4), r("b", 6, 9)], RoutingMode::Hash).is_err());
        assert!(FederationMap::new(10, vec![r("a", 0, 5), r("b", 5, 9)], RoutingMode::Hash).is_err());
        assert!(FederationMap::new(10, vec![r("a", 0, 8)], RoutingMode::Hash).is_err());
        assert!(FederationMap::new(10, vec![r("a", 0, 4), r("a", 5, 9)], RoutingMode::Hash).is_err());
    }

    #[test]
    fn paper_map_exact_cover() {
        let m = paper_map();
        let mut owners = vec![0; 128];
        for (i, r) in m.ranges().iter().enumerate() {
            for p in r.lo..=r.hi {
                owners[p as usize] += 1;
                assert_eq!(m.range_of(p), i);
            }
        }
        assert!(owners.iter().all(|&n| n == 1));
    }

    #[test]
    fn prefix_mode_routes_by_literal_cluster() {
        let r = |c: &str, lo, hi| PartitionRange { cluster: c.into(), lo, hi };
        let m = FederationMap::new(128, vec![r("cluster-1", 0, 25), r("cluster-2", 26, 127)], RoutingMode::Prefix).unwrap();
        for i in 0..200 {
            let (idx, p) = m.route(format!("cluster-1/acct-{i}").as_bytes());
            assert_eq!(idx, 0);
            assert!(p <= 25);
        }
    }

    #[test]
    fn key_shared_basics() {
        let mut s = KeySharedState::new();
        assert!(matches!(s.assign(5), Err(SimError::NoConsumers)));
        s.join(1).unwrap();
        assert_eq!(s.ranges(), &[HashRange { lo: 0, hi: 65535, consumer: 1 }]);
        s.join(2).unwrap();
        assert_eq!(s.assign(0x1000).unwrap(), 1);
        assert_eq!(s.assign(0x8000).unwrap(), 2);
        assert_eq!(s.assign_key(b"k").unwrap(), s.assign_key(b"k").unwrap());
    }

    #[test]
    fn join_then_leave_restores() {
        let mut s = KeySharedState::new();
        for c in 1..=5 {
            s.join(c).unwrap();
        }
        let before = s.clone();
        s.join(9).unwrap();
        s.leave(9).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn leave_unknown_is_error() {
        let mut s = KeySharedState::new();
        s.join(1).unwrap();
        assert!(matches!(s.leave(7), Err(SimError::UnknownConsumer(_))));
    }

    #[test]
    fn n_joins_then_any_leave_keeps_cover() {
        for n in 2..=8u32 {
            for gone in 1..=n {
                let mut s = KeySharedState::new();
                for c in 1..=n {
                    s.join(c).unwrap();
                }
                s.leave(gone).unwrap();
                s.check_cover().unwrap();
                let mut owners = std::collections::HashSet::new();
                for h in 0..HASH_SPACE {
                    let c = s.assign(h as u16).unwrap();
                    assert_ne!(c, gone);
                    owners.insert(c);
                }
                assert_eq!(owners.len() as u32, n - 1);
            }
        }
    }

    #[test]
    fn initial_bundles_span_256() {
        let ns = Namespace::new(256, 1000.0, 3).unwrap();
        assert!(ns.bundles.iter().all(|b| b.span() == 256));
        ns.check_cover().unwrap();
    }

    #[test]
    fn bundle_below_threshold_does_not_split() {
        let b = Bundle { id: 0, hash_lo: 0, hash_hi: 255, load: 10.0, split_threshold: 100.0, broker: 0 };
        assert!(bundle_tick(&b, (1, 2)).is_none());
    }

    #[test]
    fn hot_bundle_splits_once_and_halves() {
        let mut ns = Namespace::new(256, 1024.0, 3).unwrap();
        // 2048 msg/s spread uniformly over bundle 5's hashes
        let feed = |ns: &mut Namespace| {
            let (lo, span) = (5 * 256u32, 256u32);
            for i in 0..2048u32 {
                ns.observe((lo + i % span) as u16);
            }
        };
        feed(&mut ns);
        assert_eq!(ns.tick(1.0), 1);
        assert_eq!(ns.bundles.len(), 257);
        ns.check_cover().unwrap();
        feed(&mut ns);
        assert_eq!(ns.tick(1.0), 0);
        let children: Vec<&Bundle> = ns.bundles.iter().filter(|b| b.hash_lo >= 1280 && b.hash_hi < 1536).collect();
        assert_eq!(children.len(), 2);
        for c in children {
            assert!((c.load - 1024.0).abs() < 1.0, "child load {}", c.load);
        }
    }

    #[test]
    fn drain_first_preserves_order_immediate_can_break_it() {
        let run = |policy| {
            let mut d = KeySharedDispatcher::new(policy, 1);
            d.apply(ConsumerEvent::Join(1)).unwrap();
            let mut seq = 0;
            for round in 0..50u32 {
                for key in 0..20 {
                    seq += 1;
                    d.publish(key, seq).unwrap();
                }
                if round == 5 {
                    d.apply(ConsumerEvent::Join(2)).unwrap();
                }
                d.step().unwrap();
            }
            while d.pending() > 0 {
                d.step().unwrap();
            }
            d
        };
        let good = run(HandoffPolicy::DrainFirst);
        assert_eq!(first_order_violation(&good.deliveries), None);
        assert_eq!(good.deliveries.len(), 1000);
        let bad = run(HandoffPolicy::Immediate);
        assert!(first_order_violation(&bad.deliveries).is_some());
    }
}
