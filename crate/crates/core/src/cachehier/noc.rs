//! 2D mesh with X-Y routing. Latency is hop count times link latency plus
//! flit serialization plus router pipeline stages; contention is not modeled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Node {
    pub x: usize,
    pub y: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NocModel {
    pub mesh_w: usize,
    pub mesh_h: usize,
    pub channel_width_bits: usize,
    pub flit_size: usize,
    pub per_hop_latency: u64,
    pub pipeline_stages: u64,
}

impl Default for NocModel {
    fn default() -> Self {
        NocModel {
            mesh_w: 8,
            mesh_h: 8,
            channel_width_bits: 128,
            flit_size: 16,
            per_hop_latency: 1,
            pipeline_stages: 2,
        }
    }
}

impl NocModel {
    pub fn validate(&self) -> Result<()> {
        if self.mesh_w == 0 || self.mesh_h == 0 || self.flit_size == 0 {
            return Err(Error::Config("mesh dimensions and flit size must be positive".into()));
        }
        Ok(())
    }

    /// Manhattan distance, which is the X-Y route length.
    pub fn hops(&self, a: Node, b: Node) -> u64 {
        (a.x.abs_diff(b.x) + a.y.abs_diff(b.y)) as u64
    }

    pub fn flits(&self, payload_bytes: usize) -> u64 {
        payload_bytes.max(1).div_ceil(self.flit_size) as u64
    }

    pub fn latency(&self, src: Node, dst: Node, payload_bytes: usize) -> u64 {
        self.hops(src, dst) * self.per_hop_latency + self.flits(payload_bytes) + self.pipeline_stages
    }

    /// Places `n_mcs` memory controllers on the two outer columns (alternating
    /// left/right, spread evenly down each column) and fills the remaining
    /// nodes with SMs in row-major order.
    pub fn place(&self, n_sms: usize, n_mcs: usize) -> Result<Placement> {
        self.validate()?;
        if n_sms + n_mcs > self.mesh_w * self.mesh_h {
            return Err(Error::Config(format!(
                "{n_sms} SMs + {n_mcs} MCs do not fit a {}x{} mesh",
                self.mesh_w, self.mesh_h
            )));
        }
        let left = n_mcs.div_ceil(2);
        let right = n_mcs / 2;
        let column = |count: usize, k: usize| (2 * k + 1) * self.mesh_h / (2 * count.max(1));
        let mut mc_nodes = Vec::with_capacity(n_mcs);
        for i in 0..n_mcs {
            let k = i / 2;
            let node = if i % 2 == 0 {
                Node { x: 0, y: column(left, k) }
            } else {
                Node {
                    x: self.mesh_w - 1,
                    y: column(right, k),
                }
            };
            mc_nodes.push(node);
        }
        // columns may collide on tiny meshes; fall back to the first free nodes
        let mut taken = std::collections::BTreeSet::new();
        for n in mc_nodes.iter_mut() {
            if !taken.insert(*n) {
                let free = (0..self.mesh_h)
                    .flat_map(|y| (0..self.mesh_w).map(move |x| Node { x, y }))
                    .find(|c| !taken.contains(c))
                    .expect("mesh has room");
                *n = free;
                taken.insert(free);
            }
        }
        let sm_nodes = (0..self.mesh_h)
            .flat_map(|y| (0..self.mesh_w).map(move |x| Node { x, y }))
            .filter(|n| !taken.contains(n))
            .take(n_sms)
            .collect();
        Ok(Placement { sm_nodes, mc_nodes })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Placement {
    pub sm_nodes: Vec<Node>,
    pub mc_nodes: Vec<Node>,
}
