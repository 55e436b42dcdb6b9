//! Per-SM L1 data caches, per-MC L2 slices, and the mesh between them.
//!
//! L1 tags are installed at miss time; the fill completes at the reported
//! `ready_cycle`. A later access to a block whose fill is still in flight
//! merges into that fill instead of generating new traffic.

mod cache;
mod noc;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use cache::{CacheGeometry, CacheState, Lookup};
pub use noc::{NocModel, Node, Placement};

use crate::error::{Error, Result};

/// Request message size (one address) in bytes.
pub const REQUEST_BYTES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latencies {
    pub l1: u64,
    pub l2: u64,
    pub dram: u64,
}

impl Default for Latencies {
    fn default() -> Self {
        Latencies {
            l1: 1,
            l2: 30,
            dram: 120,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessKind {
    Hit,
    /// Tag present but the fill is still in flight.
    Merged,
    Miss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    L1,
    L2,
    Memory,
    RemoteUnused,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AccessOutcome {
    pub kind: AccessKind,
    pub ready_cycle: u64,
    pub source: Source,
    pub evicted: Option<u64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MemCounters {
    pub l2_hits: u64,
    pub l2_misses: u64,
    pub dram_accesses: u64,
    pub noc_messages: u64,
    pub noc_flit_hops: u64,
}

#[derive(Clone, Debug)]
pub struct MemorySystem {
    l1: Vec<CacheState>,
    l2: Vec<CacheState>,
    /// Per SM: block -> cycle its fill completes.
    pending: Vec<HashMap<u64, u64>>,
    noc: NocModel,
    placement: Placement,
    latencies: Latencies,
    block_size: u64,
    pub counters: MemCounters,
}

impl MemorySystem {
    pub fn new(
        n_sms: usize,
        n_mcs: usize,
        l1: CacheGeometry,
        l2: CacheGeometry,
        noc: NocModel,
        latencies: Latencies,
    ) -> Result<Self> {
        if n_sms == 0 || n_mcs == 0 {
            return Err(Error::Config("need at least one SM and one MC".into()));
        }
        if l1.block_size() != l2.block_size() {
            return Err(Error::Config(format!(
                "L1 block size {} differs from L2 block size {}",
                l1.block_size(),
                l2.block_size()
            )));
        }
        let placement = noc.place(n_sms, n_mcs)?;
        Ok(MemorySystem {
            l1: (0..n_sms).map(|_| CacheState::new(l1)).collect(),
            l2: (0..n_mcs)
                .map(|_| CacheState::interleaved(l2, n_mcs as u64))
                .collect(),
            pending: vec![HashMap::new(); n_sms],
            noc,
            placement,
            latencies,
            block_size: l1.block_size(),
            counters: MemCounters::default(),
        })
    }

    pub fn block_size(&self) -> u64 {
        self.block_size
    }

    pub fn n_sms(&self) -> usize {
        self.l1.len()
    }

    pub fn l1(&self, sm: usize) -> &CacheState {
        &self.l1[sm]
    }

    pub fn l2(&self, mc: usize) -> &CacheState {
        &self.l2[mc]
    }

    pub fn placement(&self) -> &Placement {
        &self.placement
    }

    pub fn noc(&self) -> &NocModel {
        &self.noc
    }

    /// Block-interleaved home memory controller.
    pub fn home_mc(&self, block: u64) -> usize {
        ((block / self.block_size) % self.l2.len() as u64) as usize
    }

    /// L1 access at `now`. Misses go to the home L2 slice (and DRAM on an L2
    /// miss) and install the block immediately with a pending fill.
    pub fn access(&mut self, sm: usize, block: u64, now: u64) -> AccessOutcome {
        let lookup = self.l1[sm].access(block);
        if lookup.hit {
            return match self.pending[sm].get(&block) {
                Some(&ready) if ready > now + self.latencies.l1 => AccessOutcome {
                    kind: AccessKind::Merged,
                    ready_cycle: ready,
                    source: Source::L1,
                    evicted: None,
                },
                _ => AccessOutcome {
                    kind: AccessKind::Hit,
                    ready_cycle: now + self.latencies.l1,
                    source: Source::L1,
                    evicted: None,
                },
            };
        }
        if let Some(victim) = lookup.evicted {
            self.pending[sm].remove(&victim);
        }
        let (lat, source) = self.miss_path_latency(sm, block);
        let ready = now + self.latencies.l1 + lat;
        self.pending[sm].insert(block, ready);
        AccessOutcome {
            kind: AccessKind::Miss,
            ready_cycle: ready,
            source,
            evicted: lookup.evicted,
        }
    }

    /// Round trip from `sm` to the block's home slice, updating L2 state and
    /// traffic counters.
    pub fn miss_path_latency(&mut self, sm: usize, block: u64) -> (u64, Source) {
        let mc = self.home_mc(block);
        let sm_node = self.placement.sm_nodes[sm];
        let mc_node = self.placement.mc_nodes[mc];
        let req = self.noc.latency(sm_node, mc_node, REQUEST_BYTES);
        let resp = self.noc.latency(mc_node, sm_node, self.block_size as usize);
        let hops = self.noc.hops(sm_node, mc_node);
        self.counters.noc_messages += 2;
        self.counters.noc_flit_hops +=
            hops * (self.noc.flits(REQUEST_BYTES) + self.noc.flits(self.block_size as usize));
        let l2 = self.l2[mc].access(block);
        let (mem, source) = if l2.hit {
            self.counters.l2_hits += 1;
            (self.latencies.l2, Source::L2)
        } else {
            self.counters.l2_misses += 1;
            self.counters.dram_accesses += 1;
            (self.latencies.l2 + self.latencies.dram, Source::Memory)
        };
        (req + mem + resp, source)
    }

    /// Earliest outstanding fill completion after `now`; forgets fills that
    /// have already completed.
    pub fn next_fill_after(&mut self, now: u64) -> Option<u64> {
        let mut next: Option<u64> = None;
        for p in &mut self.pending {
            p.retain(|_, &mut r| r > now);
            if let Some(&m) = p.values().min() {
                next = Some(next.map_or(m, |n| n.min(m)));
            }
        }
        next
    }

    /// Tag presence in one SM's L1; no state change.
    pub fn probe_sm(&self, sm: usize, block: u64) -> bool {
        self.l1[sm].contains(block)
    }

    /// Present and with no fill outstanding at `now`.
    pub fn block_ready(&self, sm: usize, block: u64, now: u64) -> bool {
        self.l1[sm].contains(block)
            && self.pending[sm].get(&block).is_none_or(|&r| r <= now)
    }

    /// Read by an assistant warp: refreshes recency of a resident block.
    pub fn touch(&mut self, sm: usize, block: u64) -> bool {
        self.l1[sm].touch(block)
    }

    /// Installs blocks in every L1 and their home L2 slices with no pending
    /// fill and without touching counters.
    pub fn prewarm(&mut self, blocks: &[u64]) {
        for &b in blocks {
            let mc = self.home_mc(b);
            self.l2[mc].access(b);
            for l1 in &mut self.l1 {
                l1.access(b);
            }
        }
        for c in self.l1.iter_mut().chain(self.l2.iter_mut()) {
            c.hits = 0;
            c.misses = 0;
        }
    }

    /// Charges a small control message between two SMs to the traffic counters.
    pub fn charge_message(&mut self, src_sm: usize, dst_sm: usize, payload_bytes: usize) {
        let hops = self
            .noc
            .hops(self.placement.sm_nodes[src_sm], self.placement.sm_nodes[dst_sm]);
        self.counters.noc_messages += 1;
        self.counters.noc_flit_hops += hops * self.noc.flits(payload_bytes);
    }

    pub fn l1_totals(&self) -> (u64, u64) {
        self.l1
            .iter()
            .fold((0, 0), |(h, m), c| (h + c.hits, m + c.misses))
    }

    pub fn l1_per_sm(&self) -> Vec<(u64, u64)> {
        self.l1.iter().map(|c| (c.hits, c.misses)).collect()
    }
}
