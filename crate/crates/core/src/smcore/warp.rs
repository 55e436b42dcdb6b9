//! Warp contexts and greedy-then-oldest selection.

use crate::workload::VectorMacOp;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WarpStatus {
    Ready,
    Blocked { until: u64 },
    Done,
}

#[derive(Clone, Debug)]
pub struct WarpContext {
    pub warp_id: u32,
    pub ops: Vec<VectorMacOp>,
    pub pc: usize,
    pub status: WarpStatus,
    /// Issue-order stamp; smaller is older.
    pub age: u64,
    /// Operands of `ops[pc]` have arrived; the next issue executes it.
    pub loaded: bool,
    /// Holds computations bounced back by a peer SM. Never forwards.
    pub is_replay: bool,
}

impl WarpContext {
    pub fn new(warp_id: u32, ops: Vec<VectorMacOp>, age: u64) -> Self {
        let status = if ops.is_empty() {
            WarpStatus::Done
        } else {
            WarpStatus::Ready
        };
        WarpContext {
            warp_id,
            ops,
            pc: 0,
            status,
            age,
            loaded: false,
            is_replay: false,
        }
    }

    pub fn replay(warp_id: u32) -> Self {
        WarpContext {
            is_replay: true,
            ..Self::new(warp_id, Vec::new(), u64::MAX)
        }
    }

    pub fn is_ready(&self, now: u64) -> bool {
        match self.status {
            WarpStatus::Ready => true,
            WarpStatus::Blocked { until } => now >= until,
            WarpStatus::Done => false,
        }
    }

    pub fn is_done(&self) -> bool {
        self.status == WarpStatus::Done
    }

    pub fn current(&self) -> Option<&VectorMacOp> {
        self.ops.get(self.pc)
    }

    /// Retires the current op.
    pub fn advance(&mut self) {
        self.pc += 1;
        self.loaded = false;
        self.status = if self.pc >= self.ops.len() {
            WarpStatus::Done
        } else {
            WarpStatus::Ready
        };
    }

    pub fn block_until(&mut self, until: u64) {
        self.status = WarpStatus::Blocked { until };
    }

    /// Appends work to a replay context, waking it if it had drained.
    pub fn push(&mut self, op: VectorMacOp) {
        self.ops.push(op);
        if self.status == WarpStatus::Done {
            self.status = WarpStatus::Ready;
        }
    }
}

/// The last-issued warp while it stays ready, otherwise the oldest ready warp.
pub fn gto_select(warps: &[WarpContext], last_issued: Option<usize>, now: u64) -> Option<usize> {
    if let Some(i) = last_issued {
        if warps.get(i).is_some_and(|w| w.is_ready(now)) {
            return Some(i);
        }
    }
    warps
        .iter()
        .enumerate()
        .filter(|(_, w)| w.is_ready(now))
        .min_by_key(|(i, w)| (w.age, *i))
        .map(|(i, _)| i)
}
