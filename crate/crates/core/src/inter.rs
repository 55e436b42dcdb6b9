//! Inter-SM opportunistic computing.
//!
//! SMs are grouped into clusters sharing one Computation Assignment Table,
//! keyed by the (input block, weight block) pair of a computation and naming
//! the member SM that holds both blocks. An SM that misses on a pair owned by
//! a peer forwards the computation's addresses instead of fetching the data;
//! the owner performs it and accumulates the result straight into the output.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::cachehier::CacheState;
use crate::error::{Error, Result};
use crate::workload::VectorMacOp;

/// `(input block, weight block)`.
pub type BlockPair = (u64, u64);

/// Entry layout accounted in hardware: 50 index bits plus a 3-bit SM id.
pub const ENTRY_BITS: usize = 50 + 3;
pub const MAX_CLUSTER_SIZE: usize = 1 << 3;

pub fn table_bytes(entries: usize) -> usize {
    entries * ENTRY_BITS / 8
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegisterOutcome {
    Inserted,
    Replaced,
    FullEvict(BlockPair),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AssignStats {
    pub lookups: u64,
    pub hits: u64,
    pub registrations: u64,
    pub evicted: u64,
    pub invalidations: u64,
}

impl AssignStats {
    pub fn accesses(&self) -> u64 {
        self.lookups + self.registrations + self.invalidations
    }
}

/// Which entries an L1 eviction removes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum EvictScope {
    /// Only entries owned by the evicting SM.
    #[default]
    Owner,
    /// Every entry mentioning the block.
    Cluster,
}

impl EvictScope {
    pub fn as_str(self) -> &'static str {
        match self {
            EvictScope::Owner => "owner",
            EvictScope::Cluster => "cluster",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "owner" => Some(EvictScope::Owner),
            "cluster" => Some(EvictScope::Cluster),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct AssignEntry {
    owner: usize,
    seq: u64,
}

#[derive(Clone, Debug)]
pub struct AssignTable {
    capacity: usize,
    entries: HashMap<BlockPair, AssignEntry>,
    order: BTreeMap<u64, BlockPair>,
    /// Block -> pairs mentioning it, for eviction scans.
    by_block: HashMap<u64, Vec<BlockPair>>,
    next_seq: u64,
    pub stats: AssignStats,
}

impl AssignTable {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "assign table needs at least one entry");
        AssignTable {
            capacity,
            entries: HashMap::with_capacity(capacity),
            order: BTreeMap::new(),
            by_block: HashMap::new(),
            next_seq: 0,
            stats: AssignStats::default(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&mut self, pair: BlockPair) -> Option<usize> {
        self.stats.lookups += 1;
        let owner = self.entries.get(&pair).map(|e| e.owner);
        if owner.is_some() {
            self.stats.hits += 1;
        }
        owner
    }

    /// Read without touching statistics.
    pub fn owner_of(&self, pair: BlockPair) -> Option<usize> {
        self.entries.get(&pair).map(|e| e.owner)
    }

    fn unlink(&mut self, pair: BlockPair) {
        let Some(e) = self.entries.remove(&pair) else {
            return;
        };
        self.order.remove(&e.seq);
        for b in [pair.0, pair.1] {
            if let Some(v) = self.by_block.get_mut(&b) {
                v.retain(|p| *p != pair);
                if v.is_empty() {
                    self.by_block.remove(&b);
                }
            }
        }
    }

    /// Installs `pair -> sm` (last registrant wins). `l1` is the registrant's
    /// cache and must hold both blocks.
    pub fn register(&mut self, pair: BlockPair, sm: usize, l1: &CacheState) -> Result<RegisterOutcome> {
        if !l1.contains(pair.0) || !l1.contains(pair.1) {
            return Err(Error::Fault(format!(
                "SM {sm} registered pair ({:#x}, {:#x}) without holding both blocks",
                pair.0, pair.1
            )));
        }
        self.stats.registrations += 1;
        let seq = self.next_seq;
        self.next_seq += 1;
        if let Some(e) = self.entries.get_mut(&pair) {
            let old = e.seq;
            e.owner = sm;
            e.seq = seq;
            self.order.remove(&old);
            self.order.insert(seq, pair);
            return Ok(RegisterOutcome::Replaced);
        }
        let mut outcome = RegisterOutcome::Inserted;
        if self.entries.len() == self.capacity {
            let (_, &oldest) = self.order.iter().next().expect("full table has entries");
            self.unlink(oldest);
            self.stats.evicted += 1;
            outcome = RegisterOutcome::FullEvict(oldest);
        }
        self.entries.insert(pair, AssignEntry { owner: sm, seq });
        self.order.insert(seq, pair);
        let mut blocks = vec![pair.0];
        if pair.1 != pair.0 {
            blocks.push(pair.1);
        }
        for b in blocks {
            self.by_block.entry(b).or_default().push(pair);
        }
        Ok(outcome)
    }

    /// Removes the entries an eviction of `block` from `sm` invalidates.
    pub fn on_evict(&mut self, block: u64, sm: usize, scope: EvictScope) -> usize {
        let Some(pairs) = self.by_block.get(&block) else {
            return 0;
        };
        let victims: Vec<BlockPair> = pairs
            .iter()
            .copied()
            .filter(|p| scope == EvictScope::Cluster || self.entries[p].owner == sm)
            .collect();
        for p in &victims {
            self.unlink(*p);
        }
        self.stats.invalidations += victims.len() as u64;
        victims.len()
    }

    /// Entries in insertion order, for inspection.
    pub fn entries(&self) -> Vec<(BlockPair, usize)> {
        self.order.values().map(|p| (*p, self.entries[p].owner)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Cluster {
    pub id: usize,
    pub members: Vec<usize>,
    pub table: AssignTable,
}

/// Splits `n_sms` into `n_clusters` contiguous clusters of near-equal size.
pub fn build_clusters(n_sms: usize, n_clusters: usize, table_entries: usize) -> Result<Vec<Cluster>> {
    if n_clusters == 0 || n_clusters > n_sms {
        return Err(Error::Config(format!(
            "cannot divide {n_sms} SMs into {n_clusters} clusters"
        )));
    }
    if table_entries == 0 {
        return Err(Error::Config("inter.table_entries must be positive".into()));
    }
    let size = n_sms.div_ceil(n_clusters);
    if size > MAX_CLUSTER_SIZE {
        return Err(Error::Config(format!(
            "clusters of {size} SMs exceed the {MAX_CLUSTER_SIZE}-SM id field"
        )));
    }
    let (base, extra) = (n_sms / n_clusters, n_sms % n_clusters);
    let mut next = 0;
    Ok((0..n_clusters)
        .map(|id| {
            let len = base + usize::from(id < extra);
            let members = (next..next + len).collect();
            next += len;
            Cluster {
                id,
                members,
                table: AssignTable::new(table_entries),
            }
        })
        .collect())
}

/// SM -> cluster index.
pub fn cluster_index(clusters: &[Cluster], n_sms: usize) -> Vec<usize> {
    let mut idx = vec![0; n_sms];
    for c in clusters {
        for &m in &c.members {
            idx[m] = c.id;
        }
    }
    idx
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MessageKind {
    /// Computation sent from a stalled SM to the pair's owner.
    Forward,
    /// Computation returned by an owner that no longer holds the data.
    Bounce,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardedComputation {
    pub op: VectorMacOp,
    pub src_sm: usize,
    pub dst_sm: usize,
    pub arrival: u64,
    pub kind: MessageKind,
}

/// Message payload: 32-bit input, weight and output addresses plus the length.
pub const FORWARD_BYTES: usize = 3 * 4 + 4;

/// In-flight inter-SM messages, delivered by `(arrival, src_sm, seq)`.
#[derive(Clone, Debug, Default)]
pub struct MessageQueue {
    queue: BTreeMap<(u64, usize, u64), ForwardedComputation>,
    seq: u64,
}

impl MessageQueue {
    pub fn send(&mut self, msg: ForwardedComputation) {
        self.queue.insert((msg.arrival, msg.src_sm, self.seq), msg);
        self.seq += 1;
    }

    /// Messages with `arrival <= now`, in delivery order.
    pub fn deliver(&mut self, now: u64) -> Vec<ForwardedComputation> {
        let later = self.queue.split_off(&(now + 1, 0, 0));
        let due = std::mem::replace(&mut self.queue, later);
        due.into_values().collect()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    /// Messages in flight, in delivery order.
    pub fn in_flight(&self) -> impl Iterator<Item = &ForwardedComputation> {
        self.queue.values()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn next_arrival(&self) -> Option<u64> {
        self.queue.keys().next().map(|k| k.0)
    }
}
