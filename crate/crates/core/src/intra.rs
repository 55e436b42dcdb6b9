//! Intra-SM opportunistic computing.
//!
//! After a normal computation the predictor derives the computations the
//! same input row will take part in once the window has moved down, and
//! records them as pending entries of the SM's Precompute Table. While the
//! SM is stalled, an assistant warp executes the oldest pending entry whose
//! operands are already resident, one at a time. A later instruction with the
//! same operand pair consumes the stored result instead of touching the cache.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::oracle::Scalar;
use crate::workload::{LayerLayout, LayerSpec, TensorLayout, VectorMacOp};

/// `(input vector address, weight vector address)`.
pub type PairKey = (u64, u64);

pub fn key_of(op: &VectorMacOp) -> PairKey {
    (op.input_vec_addr, op.weight_vec_addr)
}

/// Entry layout accounted in hardware: 64 index bits, valid, complete and a
/// 32-bit result.
pub const ENTRY_BITS: usize = 64 + 1 + 1 + 32;

/// Storage of a table with `entries` entries, in bytes.
pub fn table_bytes(entries: usize) -> usize {
    entries * ENTRY_BITS / 8
}

/// Registers one assistant warp needs: three 4-byte operands per lane.
pub const ASSISTANT_WARP_REGISTER_BYTES: usize = 3 * 4 * 32;

#[derive(Clone, Debug, PartialEq)]
pub struct PrecomputeEntry {
    pub key: PairKey,
    pub length: u32,
    pub valid: bool,
    pub complete: bool,
    pub result: Option<Scalar>,
    pub inserted_at: u64,
    /// Cycle from which a completed result may be consumed.
    pub ready_at: u64,
    seq: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TableLookup {
    Hit(Scalar),
    Pending,
    Absent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    Accepted,
    Duplicate,
    EvictedOldest(PairKey),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PrecomputeStats {
    pub made: u64,
    pub duplicates: u64,
    pub completed: u64,
    pub used: u64,
    pub invalidated: u64,
    pub evicted: u64,
    pub purged: u64,
    pub accesses: u64,
}

#[derive(Clone, Debug)]
pub struct PrecomputeTable {
    capacity: usize,
    entries: HashMap<PairKey, PrecomputeEntry>,
    /// Live entries by insertion sequence.
    order: BTreeMap<u64, PairKey>,
    /// Entries not yet completed, by insertion sequence.
    pending: BTreeMap<u64, PairKey>,
    next_seq: u64,
    pub stats: PrecomputeStats,
}

impl PrecomputeTable {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "precompute table needs at least one entry");
        PrecomputeTable {
            capacity,
            entries: HashMap::with_capacity(capacity),
            order: BTreeMap::new(),
            pending: BTreeMap::new(),
            next_seq: 0,
            stats: PrecomputeStats::default(),
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

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn get(&self, key: PairKey) -> Option<&PrecomputeEntry> {
        self.entries.get(&key)
    }

    fn remove(&mut self, key: PairKey) -> Option<PrecomputeEntry> {
        let e = self.entries.remove(&key)?;
        self.order.remove(&e.seq);
        self.pending.remove(&e.seq);
        Some(e)
    }

    /// Decode-time search. A completed entry is consumed; an entry found
    /// before completion is invalidated.
    pub fn lookup(&mut self, key: PairKey, now: u64) -> TableLookup {
        self.stats.accesses += 1;
        let Some(e) = self.entries.get(&key) else {
            return TableLookup::Absent;
        };
        match e.result {
            Some(r) if e.complete && now >= e.ready_at => {
                self.remove(key);
                self.stats.used += 1;
                TableLookup::Hit(r)
            }
            _ => {
                self.remove(key);
                self.stats.invalidated += 1;
                TableLookup::Pending
            }
        }
    }

    /// Records a predicted computation with `complete = 0`, evicting the
    /// oldest entry of a full table.
    pub fn insert(&mut self, key: PairKey, length: u32, now: u64) -> InsertOutcome {
        self.stats.accesses += 1;
        if self.entries.contains_key(&key) {
            self.stats.duplicates += 1;
            return InsertOutcome::Duplicate;
        }
        let mut outcome = InsertOutcome::Accepted;
        if self.entries.len() == self.capacity {
            let (_, &oldest) = self.order.iter().next().expect("full table has entries");
            self.remove(oldest);
            self.stats.evicted += 1;
            outcome = InsertOutcome::EvictedOldest(oldest);
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.entries.insert(
            key,
            PrecomputeEntry {
                key,
                length,
                valid: true,
                complete: false,
                result: None,
                inserted_at: now,
                ready_at: u64::MAX,
                seq,
            },
        );
        self.order.insert(seq, key);
        self.pending.insert(seq, key);
        self.stats.made += 1;
        outcome
    }

    /// Pending entries, oldest first.
    pub fn pending_oldest_first(&self) -> impl Iterator<Item = &PrecomputeEntry> {
        self.pending.values().map(|k| &self.entries[k])
    }

    /// Stores an assistant result, readable from `ready_at`.
    pub fn complete(&mut self, key: PairKey, result: Scalar, ready_at: u64) -> bool {
        let Some(e) = self.entries.get_mut(&key) else {
            return false;
        };
        if e.complete {
            return false;
        }
        e.complete = true;
        e.result = Some(result);
        e.ready_at = ready_at;
        let seq = e.seq;
        self.pending.remove(&seq);
        self.stats.completed += 1;
        self.stats.accesses += 1;
        true
    }

    /// Drops the oldest `fraction` of live entries, completed or not.
    pub fn purge_oldest(&mut self, fraction: f64) -> usize {
        let n = ((self.entries.len() as f64 * fraction.clamp(0.0, 1.0)) - 1e-9)
            .ceil()
            .max(0.0) as usize;
        let victims: Vec<PairKey> = self.order.values().take(n).copied().collect();
        for k in &victims {
            self.remove(*k);
        }
        self.stats.purged += victims.len() as u64;
        victims.len()
    }

    /// Drops every entry (layer boundary).
    pub fn flush(&mut self) {
        self.entries.clear();
        self.order.clear();
        self.pending.clear();
    }

    /// Insertion timestamps of live entries, oldest first.
    pub fn ages(&self) -> Vec<u64> {
        self.order.values().map(|k| self.entries[k].inserted_at).collect()
    }
}

/// Layer geometry the predictor needs to move a window down.
#[derive(Clone, Debug)]
pub struct PredictionGeometry {
    weight: TensorLayout,
    output: TensorLayout,
    stride: usize,
}

impl PredictionGeometry {
    pub fn new(layer: &LayerSpec, layout: &LayerLayout) -> Self {
        PredictionGeometry {
            weight: layout.weight.clone(),
            output: layout.output.clone(),
            stride: layer.stride,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub key: PairKey,
    pub length: u32,
}

/// Computations the op's input row will take part in after the window moves
/// down by `d = 1, 2, ...` output rows: the same input vector meets the
/// weight row `d * stride` rows higher, until the window top is reached or
/// the window leaves the output.
pub fn predict(op: &VectorMacOp, geom: &PredictionGeometry) -> Vec<Prediction> {
    let (Some((w_plane, w_row, w_col)), Some((_, out_row, _))) = (
        geom.weight.decode(op.weight_vec_addr),
        geom.output.decode(op.output_addr),
    ) else {
        return Vec::new();
    };
    let mut preds = Vec::new();
    let mut d = 1;
    while d * geom.stride <= w_row && out_row + d < geom.output.rows {
        let row = w_row - d * geom.stride;
        preds.push(Prediction {
            key: (op.input_vec_addr, geom.weight.addr(w_plane, row, w_col)),
            length: op.length,
        });
        d += 1;
    }
    preds
}

/// One assistant warp at a time; each computation occupies it for `latency`
/// cycles.
#[derive(Clone, Debug)]
pub struct AssistantEngine {
    pub latency: u64,
    busy_until: u64,
    pub executed: u64,
}

impl AssistantEngine {
    pub fn new(latency: u64) -> Self {
        AssistantEngine {
            latency: latency.max(1),
            busy_until: 0,
            executed: 0,
        }
    }

    pub fn idle(&self, now: u64) -> bool {
        now >= self.busy_until
    }

    pub fn busy_until(&self) -> u64 {
        self.busy_until
    }

    /// Claims the engine for one computation starting at `now`; returns the
    /// completion cycle.
    pub fn start(&mut self, now: u64) -> u64 {
        debug_assert!(self.idle(now));
        self.busy_until = now + self.latency;
        self.executed += 1;
        self.busy_until
    }

    /// Executes the oldest pending entry whose operands are resident
    /// (`ready`), storing `compute`'s result. Never fetches anything.
    pub fn run<R, C>(
        &mut self,
        table: &mut PrecomputeTable,
        now: u64,
        mut ready: R,
        mut compute: C,
    ) -> Option<PairKey>
    where
        R: FnMut(PairKey, u32) -> bool,
        C: FnMut(PairKey, u32) -> Scalar,
    {
        if !self.idle(now) {
            return None;
        }
        let (key, length) = table
            .pending_oldest_first()
            .find(|e| ready(e.key, e.length))
            .map(|e| (e.key, e.length))?;
        let value = compute(key, length);
        let done = self.start(now);
        table.complete(key, value, done);
        Some(key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{enumerate_ops, LayerLayout};
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn storage_accounting() {
        // 256 entries x 98 bits is about 3.1 KB
        assert_eq!(table_bytes(256), 3136);
        assert_eq!(ASSISTANT_WARP_REGISTER_BYTES, 384);
    }

    #[test]
    fn lookup_states() {
        let mut t = PrecomputeTable::new(4);
        assert_eq!(t.lookup((1, 2), 0), TableLookup::Absent);

        t.insert((1, 2), 3, 0);
        t.complete((1, 2), Scalar::Int(-2), 4);
        assert_eq!(t.lookup((1, 2), 4), TableLookup::Hit(Scalar::Int(-2)));
        assert!(t.is_empty());

        t.insert((5, 6), 3, 0);
        assert_eq!(t.lookup((5, 6), 1), TableLookup::Pending);
        assert!(t.get((5, 6)).is_none());
        assert_eq!((t.stats.used, t.stats.invalidated), (1, 1));
    }

    #[test]
    fn insert_outcomes() {
        let mut t = PrecomputeTable::new(256);
        assert_eq!(t.insert((0, 0), 1, 0), InsertOutcome::Accepted);
        assert_eq!(t.insert((0, 0), 1, 1), InsertOutcome::Duplicate);
        assert_eq!(t.len(), 1);
        for i in 1..256u64 {
            t.insert((i, 0), 1, i);
        }
        assert_eq!(t.len(), 256);
        assert_eq!(t.insert((999, 0), 1, 999), InsertOutcome::EvictedOldest((0, 0)));
        assert_eq!(t.len(), 256);
    }

    #[test]
    fn purge_removes_oldest_quarter() {
        let mut t = PrecomputeTable::new(128);
        assert_eq!(t.purge_oldest(0.25), 0);
        // insertion times deliberately not in key order
        let times: Vec<u64> = (0..100).map(|i| (i * 37) % 100).collect();
        let mut sorted = times.clone();
        sorted.sort();
        // insert in timestamp order so that insertion order equals age order
        for &ts in &sorted {
            t.insert((ts, 1), 1, ts);
        }
        assert_eq!(t.purge_oldest(0.25), 25);
        let left = t.ages();
        assert_eq!(left.len(), 75);
        assert!(left.iter().all(|&a| a >= sorted[25]));
    }

    fn fig_geometry() -> (LayerSpec, LayerLayout) {
        let l = LayerSpec::forward("fig", 1, 1, 6, 8, 3, 3, 1, 0);
        let layout = LayerLayout::new(&l).unwrap();
        (l, layout)
    }

    #[test]
    fn three_predictions_from_first_window() {
        let (l, layout) = fig_geometry();
        let geom = PredictionGeometry::new(&l, &layout);
        let ops = enumerate_ops(&l, &layout).unwrap();
        let window: Vec<&VectorMacOp> = ops.iter().take(3).collect();
        let (w0, w1) = (layout.weight.addr(0, 0, 0), layout.weight.addr(0, 1, 0));
        let (r1, r2) = (layout.input.addr(0, 1, 0), layout.input.addr(0, 2, 0));
        let keys: HashSet<PairKey> = window
            .iter()
            .flat_map(|op| predict(op, &geom))
            .map(|p| p.key)
            .collect();
        assert_eq!(keys, HashSet::from([(r1, w0), (r2, w1), (r2, w0)]));
        assert!(predict(window[0], &geom).is_empty());
    }

    #[test]
    fn bottom_row_and_single_row_filters_predict_nothing() {
        let (l, layout) = fig_geometry();
        let geom = PredictionGeometry::new(&l, &layout);
        let ops = enumerate_ops(&l, &layout).unwrap();
        let last_out_row = l.out_height() - 1;
        for op in &ops {
            if layout.output.decode(op.output_addr).unwrap().1 == last_out_row {
                assert!(predict(op, &geom).is_empty());
            }
        }
        let flat = LayerSpec::forward("flat", 1, 2, 5, 5, 1, 3, 1, 0);
        let fl = LayerLayout::new(&flat).unwrap();
        let g = PredictionGeometry::new(&flat, &fl);
        assert!(enumerate_ops(&flat, &fl).unwrap().iter().all(|op| predict(op, &g).is_empty()));
    }

    #[test]
    fn assistant_skips_non_resident_entries() {
        let mut t = PrecomputeTable::new(8);
        t.insert((1, 1), 3, 0);
        let mut eng = AssistantEngine::new(4);
        assert_eq!(eng.run(&mut t, 10, |_, _| false, |_, _| Scalar::Int(0)), None);
        assert_eq!(t.pending_len(), 1);
    }

    #[test]
    fn assistant_completes_one_entry_in_latency() {
        let mut t = PrecomputeTable::new(8);
        t.insert((1, 1), 3, 0);
        let mut eng = AssistantEngine::new(4);
        assert_eq!(eng.run(&mut t, 100, |_, _| true, |_, _| Scalar::Int(7)), Some((1, 1)));
        assert_eq!(eng.busy_until(), 104);
        assert_eq!(t.lookup((1, 1), 103), TableLookup::Pending);
    }

    #[test]
    fn assistant_chains_three_entries_in_a_stall() {
        let mut t = PrecomputeTable::new(8);
        for k in 0..3 {
            t.insert((k, k), 3, k);
        }
        let mut eng = AssistantEngine::new(4);
        let stall_start = 50;
        let mut finished = Vec::new();
        for now in stall_start..stall_start + 30 {
            if eng.run(&mut t, now, |_, _| true, |k, _| Scalar::Int(k.0 as i64)).is_some() {
                finished.push(eng.busy_until());
            }
        }
        assert_eq!(finished, vec![54, 58, 62]);
        assert_eq!(t.stats.completed, 3);
        for k in 0..3 {
            assert_eq!(t.lookup((k, k), 62), TableLookup::Hit(Scalar::Int(k as i64)));
        }
    }

    proptest! {
        #[test]
        fn predictions_are_future_ops(ic in 1usize..3, oc in 1usize..3, h in 3usize..9, w in 3usize..9, f in 1usize..4, s in 1usize..3, p in 0usize..2) {
            let l = LayerSpec::forward("p", ic, oc, h, w, f, f, s, p);
            prop_assume!(l.validate().is_ok());
            let layout = LayerLayout::new(&l).unwrap();
            let ops = enumerate_ops(&l, &layout).unwrap();
            let geom = PredictionGeometry::new(&l, &layout);
            let position: HashMap<PairKey, usize> = ops.iter().enumerate().map(|(i, o)| (key_of(o), i)).collect();
            prop_assert_eq!(position.len(), ops.len());
            for (i, op) in ops.iter().enumerate() {
                for pr in predict(op, &geom) {
                    let j = position.get(&pr.key);
                    prop_assert!(j.is_some(), "prediction is not an op of the layer");
                    prop_assert!(*j.unwrap() > i);
                    prop_assert_eq!(ops[*j.unwrap()].length, pr.length);
                }
            }
        }

        #[test]
        fn table_never_exceeds_capacity(cap in 1usize..16, keys in proptest::collection::vec((0u64..40, any::<bool>()), 1..300)) {
            let mut t = PrecomputeTable::new(cap);
            for (i, (k, look)) in keys.into_iter().enumerate() {
                if look {
                    t.lookup((k, 0), i as u64);
                } else {
                    t.insert((k, 0), 1, i as u64);
                    if k % 3 == 0 {
                        t.complete((k, 0), Scalar::Int(1), i as u64);
                    }
                }
                prop_assert!(t.len() <= cap);
                prop_assert!(t.pending_len() <= t.len());
                prop_assert!(t.stats.used <= t.stats.completed && t.stats.completed <= t.stats.made);
            }
        }
    }
}
