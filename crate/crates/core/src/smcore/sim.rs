use std::collections::VecDeque;

use crate::cachehier::MemorySystem;
use crate::error::{Error, Result};
use crate::inter::{
    build_clusters, cluster_index, Cluster, ForwardedComputation, MessageKind, MessageQueue,
    FORWARD_BYTES,
};
use crate::intra::{key_of, predict, AssistantEngine, PairKey, PrecomputeTable, PredictionGeometry, TableLookup};
use crate::metrics::{Availability, Computations, InterStats, SimStats};
use crate::oracle::{MemoryImage, OutputMap, Scalar};
use crate::workload::{block_pair_of, spanned_blocks, LayerLayout, LayerSpec, VectorMacOp, WarpProgram};

use super::output::OutputBuffer;
use super::warp::{gto_select, WarpContext, WarpStatus};
use super::SimConfig;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub cycle: u64,
    pub sm: usize,
    /// `-1` for events not tied to a warp.
    pub warp: i64,
    pub event: &'static str,
}

#[derive(Clone, Debug)]
pub struct SimOutcome {
    pub stats: SimStats,
    pub output: OutputMap,
    pub add_counts: Vec<u32>,
    pub trace: Vec<TraceEvent>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    Busy,
    Issued,
    Assisted,
    /// No ready warp, but the assistant engine is still computing.
    Assisting,
    Stalled,
    Idle,
}

struct Sm {
    /// Normal warps followed by the replay context.
    warps: Vec<WarpContext>,
    last_issued: Option<usize>,
    busy_until: u64,
    table: Option<PrecomputeTable>,
    assistant: AssistantEngine,
    assigned: VecDeque<ForwardedComputation>,
    /// Forwards addressed to this SM that are in flight or queued.
    inbound: usize,
    stall_cycles: u64,
    assistant_cycles: u64,
}

impl Sm {
    fn replay_index(&self) -> usize {
        self.warps.len() - 1
    }

    fn has_work(&self) -> bool {
        !self.assigned.is_empty() || self.warps.iter().any(|w| !w.is_done())
    }
}

/// One layer on one machine configuration.
pub struct Simulation<'a> {
    cfg: SimConfig,
    layout: &'a LayerLayout,
    image: &'a MemoryImage,
    geom: PredictionGeometry,
    mem: MemorySystem,
    sms: Vec<Sm>,
    clusters: Vec<Cluster>,
    cluster_of: Vec<usize>,
    messages: MessageQueue,
    output: OutputBuffer,
    total_ops: u64,
    comps: Computations,
    inter: InterStats,
    avail: Availability,
    instructions: u64,
    mac_ops: u64,
    capacity_checks: u64,
    trace: Vec<TraceEvent>,
}

/// Dot product of the operand vectors named by `key`.
fn dot(layout: &LayerLayout, image: &MemoryImage, key: PairKey, length: u32) -> Result<Scalar> {
    let (Some(i), Some(w)) = (layout.input.index_of(key.0), layout.weight.index_of(key.1)) else {
        return Err(Error::Fault(format!(
            "operand address outside its region: input {:#x}, weight {:#x}",
            key.0, key.1
        )));
    };
    image.dot(i, w, length as usize).ok_or_else(|| {
        Error::Fault(format!(
            "operand vectors at {:#x}/{:#x} of length {length} leave the memory image",
            key.0, key.1
        ))
    })
}

impl<'a> Simulation<'a> {
    pub fn new(
        cfg: &SimConfig,
        layer: &LayerSpec,
        layout: &'a LayerLayout,
        image: &'a MemoryImage,
        warps: &[WarpProgram],
    ) -> Result<Self> {
        cfg.validate()?;
        layer.validate()?;
        let mem = MemorySystem::new(cfg.n_sms, cfg.n_mcs, cfg.l1, cfg.l2, cfg.noc, cfg.latencies)?;
        let mut per_sm: Vec<Vec<WarpContext>> = vec![Vec::new(); cfg.n_sms];
        let mut total_ops = 0;
        for w in warps {
            let ops = w.instruction_stream();
            total_ops += ops.len() as u64;
            per_sm[w.sm_id as usize % cfg.n_sms].push(WarpContext::new(w.warp_id, ops, w.warp_id as u64));
        }
        let sms = per_sm
            .into_iter()
            .enumerate()
            .map(|(i, mut ws)| {
                ws.push(WarpContext::replay(u32::MAX - i as u32));
                Sm {
                    warps: ws,
                    last_issued: None,
                    busy_until: 0,
                    inbound: 0,
                    table: cfg.intra.enabled.then(|| PrecomputeTable::new(cfg.intra.table_entries)),
                    assistant: AssistantEngine::new(cfg.intra.assist_latency),
                    assigned: VecDeque::new(),
                    stall_cycles: 0,
                    assistant_cycles: 0,
                }
            })
            .collect();
        let clusters = if cfg.inter.enabled {
            build_clusters(cfg.n_sms, cfg.inter.clusters, cfg.inter.table_entries)?
        } else {
            Vec::new()
        };
        let cluster_of = if cfg.inter.enabled {
            cluster_index(&clusters, cfg.n_sms)
        } else {
            vec![0; cfg.n_sms]
        };
        Ok(Simulation {
            cfg: cfg.clone(),
            layout,
            image,
            geom: PredictionGeometry::new(layer, layout),
            mem,
            sms,
            clusters,
            cluster_of,
            messages: MessageQueue::default(),
            output: OutputBuffer::new(layout.output.len(), image.mode),
            total_ops,
            comps: Computations::default(),
            inter: InterStats::default(),
            avail: Availability::default(),
            instructions: 0,
            mac_ops: 0,
            capacity_checks: 0,
            trace: Vec::new(),
        })
    }

    /// Makes every operand block of the layer resident everywhere before the
    /// run, as far as capacity allows.
    pub fn prewarm(&mut self) {
        let mut blocks: Vec<u64> = self
            .sms
            .iter()
            .flat_map(|s| s.warps.iter())
            .flat_map(|w| w.ops.iter())
            .flat_map(|op| self.blocks_of_key(key_of(op), op.length))
            .collect();
        blocks.sort_unstable();
        blocks.dedup();
        self.mem.prewarm(&blocks);
    }

    fn blocks_of_key(&self, key: PairKey, length: u32) -> Vec<u64> {
        let bs = self.mem.block_size();
        let word = self.layout.input.word_size;
        spanned_blocks(key.0, length, word, bs)
            .chain(spanned_blocks(key.1, length, word, bs))
            .collect()
    }

    fn note(&mut self, cycle: u64, sm: usize, warp: i64, event: &'static str) {
        if self.cfg.trace {
            self.trace.push(TraceEvent { cycle, sm, warp, event });
        }
    }

    fn output_index(&self, op: &VectorMacOp) -> Result<usize> {
        self.layout
            .output
            .index_of(op.output_addr)
            .ok_or_else(|| Error::Fault(format!("output address {:#x} outside the output region", op.output_addr)))
    }

    fn accumulate(&mut self, op: &VectorMacOp, value: Scalar) -> Result<()> {
        let idx = self.output_index(op)?;
        self.output.add(idx, value)
    }

    pub fn run(mut self) -> Result<SimOutcome> {
        let mut now = 0u64;
        let mut progress_at = 0u64;
        let mut steps = vec![Step::Idle; self.sms.len()];
        loop {
            if self.finished(now) {
                break;
            }
            let mut progressed = self.deliver(now)?;
            if self.cfg.intra.enabled && now > 0 && now.is_multiple_of(self.cfg.intra.purge_period) {
                let f = self.cfg.intra.purge_fraction;
                for sm in &mut self.sms {
                    if let Some(t) = sm.table.as_mut() {
                        t.purge_oldest(f);
                    }
                }
            }
            for s in 0..self.sms.len() {
                steps[s] = self.step_sm(s, now)?;
                progressed |= matches!(steps[s], Step::Issued | Step::Assisted);
            }
            if self.cfg.check_invariants {
                self.check_invariants(now)?;
            }
            if progressed {
                progress_at = now;
            }
            let next = if self.cfg.check_invariants {
                now + 1
            } else {
                match self.next_event(now) {
                    Some(t) => t.max(now + 1),
                    None if self.finished(now + 1) => now + 1,
                    None => {
                        return Err(Error::NonTermination {
                            cycle: now,
                            idle: now - progress_at,
                            detail: self.stuck_report(now),
                        })
                    }
                }
            };
            let skipped = next - now - 1;
            if skipped > 0 {
                for (sm, st) in self.sms.iter_mut().zip(&steps) {
                    if *st == Step::Stalled {
                        sm.stall_cycles += skipped;
                    }
                }
            }
            now = next;
            if now - progress_at > self.cfg.max_idle_cycles {
                return Err(Error::NonTermination {
                    cycle: now,
                    idle: now - progress_at,
                    detail: self.stuck_report(now),
                });
            }
        }
        Ok(self.finish(now))
    }

    fn finished(&self, now: u64) -> bool {
        self.messages.is_empty() && self
                .sms
                .iter()
                .all(|s| !s.has_work() && s.busy_until <= now && s.assistant.idle(now))
    }

    fn stuck_report(&self, now: u64) -> String {
        let waiting: usize = self
            .sms
            .iter()
            .flat_map(|s| &s.warps)
            .filter(|w| !w.is_done())
            .count();
        let assigned: usize = self.sms.iter().map(|s| s.assigned.len()).sum();
        format!(
            "{waiting} unfinished warps, {assigned} queued assigned computations, {} messages in flight at cycle {now}",
            self.messages.len()
        )
    }

    fn next_event(&mut self, now: u64) -> Option<u64> {
        let mut t: Option<u64> = None;
        let mut consider = |x: u64| {
            if x > now {
                t = Some(t.map_or(x, |c: u64| c.min(x)));
            }
        };
        for sm in &self.sms {
            consider(sm.busy_until);
            consider(sm.assistant.busy_until());
            for w in &sm.warps {
                if let WarpStatus::Blocked { until } = w.status {
                    consider(until);
                }
            }
        }
        if let Some(a) = self.messages.next_arrival() {
            consider(a.max(now + 1));
        }
        if let Some(f) = self.mem.next_fill_after(now) {
            consider(f);
        }
        let purge = self.cfg.intra.enabled.then(|| {
            let p = self.cfg.intra.purge_period;
            (now / p + 1) * p
        });
        match (t, purge) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, _) => a,
        }
    }

    fn check_invariants(&mut self, now: u64) -> Result<()> {
        self.capacity_checks += 1;
        for (i, sm) in self.sms.iter().enumerate() {
            if let Some(t) = &sm.table {
                if t.len() > t.capacity() || t.pending_len() > t.len() {
                    return Err(Error::Invariant {
                        cycle: now,
                        detail: format!("SM {i} precompute table holds {} of {}", t.len(), t.capacity()),
                    });
                }
            }
        }
        for (i, sm) in self.sms.iter().enumerate() {
            let flying = self
                .messages
                .in_flight()
                .filter(|m| m.kind == MessageKind::Forward && m.dst_sm == i)
                .count();
            if sm.inbound != sm.assigned.len() + flying || sm.inbound > self.cfg.inter.max_outstanding {
                return Err(Error::Invariant {
                    cycle: now,
                    detail: format!("SM {i} counts {} inbound forwards, holds {} and {flying} in flight", sm.inbound, sm.assigned.len()),
                });
            }
        }
        for c in &self.clusters {
            if c.table.len() > c.table.capacity() {
                return Err(Error::Invariant {
                    cycle: now,
                    detail: format!("cluster {} assign table holds {} of {}", c.id, c.table.len(), c.table.capacity()),
                });
            }
            for ((a, b), owner) in c.table.entries() {
                if !self.mem.probe_sm(owner, a) || !self.mem.probe_sm(owner, b) {
                    return Err(Error::Invariant {
                        cycle: now,
                        detail: format!("assign entry ({a:#x}, {b:#x}) names SM {owner}, which lost a block"),
                    });
                }
            }
        }
        Ok(())
    }

    fn deliver(&mut self, now: u64) -> Result<bool> {
        let msgs = self.messages.deliver(now);
        let any = !msgs.is_empty();
        for m in msgs {
            match m.kind {
                MessageKind::Forward => self.receive_forward(m, now)?,
                MessageKind::Bounce => {
                    let sm = &mut self.sms[m.dst_sm];
                    let r = sm.replay_index();
                    sm.warps[r].push(m.op);
                    self.note(now, m.dst_sm, -1, "bounce_back");
                }
            }
        }
        Ok(any)
    }

    fn receive_forward(&mut self, m: ForwardedComputation, now: u64) -> Result<()> {
        let o = m.dst_sm;
        if let Some(t) = self.sms[o].table.as_mut() {
            if let TableLookup::Hit(v) = t.lookup(key_of(&m.op), now) {
                self.accumulate(&m.op, v)?;
                self.sms[o].inbound -= 1;
                self.comps.assigned += 1;
                self.inter.memo_reuses += 1;
                self.note(now, o, -1, "memo_reuse");
                return Ok(());
            }
        }
        let resident = self
            .blocks_of_key(key_of(&m.op), m.op.length)
            .iter()
            .all(|&b| self.mem.probe_sm(o, b));
        if resident {
            self.sms[o].assigned.push_back(m);
            self.note(now, o, -1, "assigned");
        } else {
            self.bounce(m, now);
        }
        Ok(())
    }

    fn bounce(&mut self, m: ForwardedComputation, now: u64) {
        self.sms[m.dst_sm].inbound -= 1;
        let back = ForwardedComputation {
            op: m.op,
            src_sm: m.dst_sm,
            dst_sm: m.src_sm,
            arrival: now + self.cfg.inter.forward_latency,
            kind: MessageKind::Bounce,
        };
        self.mem.charge_message(back.src_sm, back.dst_sm, FORWARD_BYTES);
        self.messages.send(back);
        self.inter.bounces += 1;
        self.note(now, m.dst_sm, -1, "bounce");
    }

    fn handle_eviction(&mut self, s: usize, victim: u64, now: u64) {
        if self.cfg.inter.enabled {
            let c = self.cluster_of[s];
            self.clusters[c].table.on_evict(victim, s, self.cfg.inter.evict_scope);
        }
        if self.sms[s].assigned.is_empty() {
            return;
        }
        let queued = std::mem::take(&mut self.sms[s].assigned);
        let mut keep = VecDeque::with_capacity(queued.len());
        for m in queued {
            if self.blocks_of_key(key_of(&m.op), m.op.length).contains(&victim) {
                self.bounce(m, now);
            } else {
                keep.push_back(m);
            }
        }
        self.sms[s].assigned = keep;
    }

    fn step_sm(&mut self, s: usize, now: u64) -> Result<Step> {
        if now < self.sms[s].busy_until {
            return Ok(Step::Busy);
        }
        let sm = &self.sms[s];
        if let Some(w) = gto_select(&sm.warps, sm.last_issued, now) {
            self.sms[s].last_issued = Some(w);
            let cost = self.issue(s, w, now)?;
            self.sms[s].busy_until = now + cost;
            return Ok(Step::Issued);
        }
        if self.assist(s, now)? {
            return Ok(Step::Assisted);
        }
        if !self.sms[s].assistant.idle(now) {
            return Ok(Step::Assisting);
        }
        if self.sms[s].has_work() {
            self.sms[s].stall_cycles += 1;
            return Ok(Step::Stalled);
        }
        Ok(Step::Idle)
    }

    /// Issues the current instruction of warp `w`; returns the cycles the
    /// issue slot is occupied.
    fn issue(&mut self, s: usize, w: usize, now: u64) -> Result<u64> {
        let warp = &self.sms[s].warps[w];
        let op = *warp.current().expect("ready warp has an op");
        let (loaded, is_replay) = (warp.loaded, warp.is_replay);
        let wid = warp.warp_id as i64;
        if loaded {
            self.execute(s, w, &op, now)?;
            return Ok(self.cfg.issue_cost());
        }
        if let Some(t) = self.sms[s].table.as_mut() {
            if let TableLookup::Hit(v) = t.lookup(key_of(&op), now) {
                self.accumulate(&op, v)?;
                self.comps.predicted_used += 1;
                self.retire(s, w, is_replay);
                self.note(now, s, wid, "precompute_hit");
                return Ok(self.cfg.intra.hit_cost);
            }
        }
        let blocks = self.blocks_of_key(key_of(&op), op.length);
        let l1 = self.cfg.latencies.l1;
        if blocks.iter().all(|&b| self.mem.probe_sm(s, b)) {
            let mut ready = now + l1;
            for &b in &blocks {
                ready = ready.max(self.mem.access(s, b, now).ready_cycle);
            }
            if ready <= now + l1 {
                self.execute(s, w, &op, now)?;
                return Ok(self.cfg.issue_cost());
            }
            let warp = &mut self.sms[s].warps[w];
            warp.block_until(ready);
            warp.loaded = true;
            self.note(now, s, wid, "merge");
            return Ok(1);
        }
        let bs = self.mem.block_size();
        let pair = block_pair_of(&op, bs);
        if self.cfg.inter.enabled && !is_replay {
            let c = self.cluster_of[s];
            if let Some(owner) = self.clusters[c].table.lookup(pair) {
                if owner != s && self.sms[owner].inbound < self.cfg.inter.max_outstanding {
                    self.sms[owner].inbound += 1;
                    self.messages.send(ForwardedComputation {
                        op,
                        src_sm: s,
                        dst_sm: owner,
                        arrival: now + self.cfg.inter.forward_latency,
                        kind: MessageKind::Forward,
                    });
                    self.mem.charge_message(s, owner, FORWARD_BYTES);
                    self.inter.forwards += 1;
                    self.inter.fills_avoided += 1;
                    self.retire(s, w, is_replay);
                    self.note(now, s, wid, "forward");
                    return Ok(1);
                }
            }
        }
        if self.cfg.probe_availability {
            let missing: Vec<u64> = blocks.iter().copied().filter(|&b| !self.mem.probe_sm(s, b)).collect();
            self.avail.misses += 1;
            let found = (0..self.sms.len())
                .filter(|&t| t != s)
                .any(|t| missing.iter().all(|&b| self.mem.block_ready(t, b, now)));
            if found {
                self.avail.found_elsewhere += 1;
            }
        }
        let mut ready = now + l1;
        for &b in &blocks {
            let out = self.mem.access(s, b, now);
            ready = ready.max(out.ready_cycle);
            if let Some(v) = out.evicted {
                self.handle_eviction(s, v, now);
            }
        }
        if self.cfg.inter.enabled && self.mem.probe_sm(s, pair.0) && self.mem.probe_sm(s, pair.1) {
            let c = self.cluster_of[s];
            self.clusters[c].table.register(pair, s, self.mem.l1(s))?;
        }
        let warp = &mut self.sms[s].warps[w];
        warp.block_until(ready);
        warp.loaded = true;
        self.note(now, s, wid, "miss");
        Ok(1)
    }

    fn retire(&mut self, s: usize, w: usize, is_replay: bool) {
        self.sms[s].warps[w].advance();
        if !is_replay {
            self.instructions += 1;
        }
    }

    /// Normal execution: MAC, accumulate, then predict follow-up work.
    fn execute(&mut self, s: usize, w: usize, op: &VectorMacOp, now: u64) -> Result<()> {
        let v = dot(self.layout, self.image, key_of(op), op.length)?;
        self.accumulate(op, v)?;
        self.comps.normal += 1;
        self.mac_ops += 1;
        let is_replay = self.sms[s].warps[w].is_replay;
        self.retire(s, w, is_replay);
        if let Some(t) = self.sms[s].table.as_mut() {
            for p in predict(op, &self.geom) {
                t.insert(p.key, p.length, now);
            }
        }
        let wid = self.sms[s].warps[w].warp_id as i64;
        self.note(now, s, wid, "exec");
        Ok(())
    }

    /// Runs one assistant computation during a stall: a queued assigned
    /// computation first, otherwise the oldest eligible prediction.
    fn assist(&mut self, s: usize, now: u64) -> Result<bool> {
        if !self.sms[s].assistant.idle(now) {
            return Ok(false);
        }
        let pos = self.sms[s].assigned.iter().position(|m| {
            self.blocks_of_key(key_of(&m.op), m.op.length)
                .iter()
                .all(|&b| self.mem.block_ready(s, b, now))
        });
        if let Some(i) = pos {
            let m = self.sms[s].assigned.remove(i).expect("position is in range");
            self.sms[s].inbound -= 1;
            let v = dot(self.layout, self.image, key_of(&m.op), m.op.length)?;
            self.accumulate(&m.op, v)?;
            self.comps.assigned += 1;
            self.mac_ops += 1;
            for b in self.blocks_of_key(key_of(&m.op), m.op.length) {
                self.mem.touch(s, b);
            }
            self.occupy_assistant(s, now);
            self.note(now, s, -1, "assist_assigned");
            return Ok(true);
        }
        // Speculation only fills stalls of unfinished warps.
        if self.sms[s].table.is_none() || self.sms[s].warps.iter().all(|w| w.is_done()) {
            return Ok(false);
        }
        let bs = self.mem.block_size();
        let word = self.layout.input.word_size;
        let (mem, layout, image) = (&self.mem, self.layout, self.image);
        let mut failure = None;
        let sm = &mut self.sms[s];
        let table = sm.table.as_mut().expect("checked above");
        let done = sm.assistant.run(
            table,
            now,
            |key, len| {
                spanned_blocks(key.0, len, word, bs)
                    .chain(spanned_blocks(key.1, len, word, bs))
                    .all(|b| mem.block_ready(s, b, now))
            },
            |key, len| match dot(layout, image, key, len) {
                Ok(v) => v,
                Err(e) => {
                    failure = Some(e);
                    Scalar::zero(image.mode)
                }
            },
        );
        if let Some(e) = failure {
            return Err(e);
        }
        let Some(key) = done else {
            return Ok(false);
        };
        let len = self.sms[s].table.as_ref().and_then(|t| t.get(key)).map_or(1, |e| e.length);
        for b in self.blocks_of_key(key, len) {
            self.mem.touch(s, b);
        }
        self.mac_ops += 1;
        let sm = &mut self.sms[s];
        sm.busy_until = now + 1;
        sm.assistant_cycles += self.cfg.intra.assist_latency;
        self.note(now, s, -1, "assist_predicted");
        Ok(true)
    }

    fn occupy_assistant(&mut self, s: usize, now: u64) {
        let sm = &mut self.sms[s];
        sm.assistant.start(now);
        sm.busy_until = now + 1;
        sm.assistant_cycles += sm.assistant.latency;
    }

    fn finish(self, now: u64) -> SimOutcome {
        let (l1_hits, l1_misses) = self.mem.l1_totals();
        let mut predictions = crate::intra::PrecomputeStats::default();
        let mut precompute_accesses = 0;
        for t in self.sms.iter().filter_map(|s| s.table.as_ref()) {
            let p = t.stats;
            predictions.made += p.made;
            predictions.duplicates += p.duplicates;
            predictions.completed += p.completed;
            predictions.used += p.used;
            predictions.invalidated += p.invalidated;
            predictions.evicted += p.evicted;
            predictions.purged += p.purged;
            predictions.accesses += p.accesses;
            precompute_accesses += p.accesses;
        }
        let mut inter = self.inter;
        let mut assign_accesses = 0;
        for c in &self.clusters {
            let a = c.table.stats;
            inter.assign_lookups += a.lookups;
            inter.assign_hits += a.hits;
            inter.registrations += a.registrations;
            inter.invalidations += a.invalidations;
            inter.table_evictions += a.evicted;
            assign_accesses += a.accesses();
        }
        let tables_enabled = if self.cfg.intra.enabled { self.sms.len() as u64 } else { 0 }
            + self.clusters.len() as u64;
        let c = self.mem.counters;
        let stats = SimStats {
            total_cycles: now,
            total_ops: self.total_ops,
            instructions_issued: self.instructions,
            stall_cycles: self.sms.iter().map(|s| s.stall_cycles).collect(),
            assistant_cycles: self.sms.iter().map(|s| s.assistant_cycles).collect(),
            l1_hits,
            l1_misses,
            l2_hits: c.l2_hits,
            l2_misses: c.l2_misses,
            dram_accesses: c.dram_accesses,
            noc_messages: c.noc_messages,
            noc_flit_hops: c.noc_flit_hops,
            precompute_accesses,
            assign_accesses,
            computations: self.comps,
            predictions,
            inter,
            availability: self.avail,
            mac_ops: self.mac_ops,
            tables_enabled,
            capacity_checks: self.capacity_checks,
        };
        let add_counts = self.output.add_counts().to_vec();
        SimOutcome {
            stats,
            output: self.output.into_map(),
            add_counts,
            trace: self.trace,
        }
    }
}

/// Builds and runs one simulation.
pub fn run_simulation(
    cfg: &SimConfig,
    layer: &LayerSpec,
    layout: &LayerLayout,
    image: &MemoryImage,
    warps: &[WarpProgram],
) -> Result<SimOutcome> {
    Simulation::new(cfg, layer, layout, image, warps)?.run()
}
