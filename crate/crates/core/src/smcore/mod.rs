//! SM cores: warp contexts, GTO scheduling, vector-MAC execution and the
//! global cycle loop, with the hooks through which the intra- and inter-SM
//! schemes intervene.

mod output;
mod sim;
mod warp;

use serde::Serialize;

pub use output::OutputBuffer;
pub use sim::{run_simulation, SimOutcome, Simulation, TraceEvent};
pub use warp::{gto_select, WarpContext, WarpStatus};

use crate::cachehier::{CacheGeometry, Latencies, NocModel};
use crate::error::{Error, Result};
use crate::inter::EvictScope;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IntraConfig {
    pub enabled: bool,
    pub table_entries: usize,
    pub assist_latency: u64,
    pub purge_period: u64,
    pub purge_fraction: f64,
    /// Issue cycles of an instruction answered from the Precompute Table.
    pub hit_cost: u64,
}

impl Default for IntraConfig {
    fn default() -> Self {
        IntraConfig {
            enabled: false,
            table_entries: 256,
            assist_latency: 4,
            purge_period: 10_000,
            purge_fraction: 0.25,
            hit_cost: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InterConfig {
    pub enabled: bool,
    pub clusters: usize,
    pub table_entries: usize,
    pub forward_latency: u64,
    pub evict_scope: EvictScope,
    /// Forwarded computations an owner may have outstanding (in flight or
    /// queued) before requesters fall back to their own miss path.
    pub max_outstanding: usize,
}

impl Default for InterConfig {
    fn default() -> Self {
        InterConfig {
            enabled: false,
            clusters: 8,
            table_entries: 512,
            forward_latency: 8,
            evict_scope: EvictScope::Owner,
            max_outstanding: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Scheme {
    Baseline,
    Intra,
    Inter,
    Both,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Baseline, Scheme::Intra, Scheme::Inter, Scheme::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Baseline => "baseline",
            Scheme::Intra => "intra",
            Scheme::Inter => "inter",
            Scheme::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "baseline" => Some(Scheme::Baseline),
            "intra" => Some(Scheme::Intra),
            "inter" => Some(Scheme::Inter),
            "both" | "combined" => Some(Scheme::Both),
            _ => None,
        }
    }

    pub fn intra(self) -> bool {
        matches!(self, Scheme::Intra | Scheme::Both)
    }

    pub fn inter(self) -> bool {
        matches!(self, Scheme::Inter | Scheme::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    pub n_sms: usize,
    pub warp_size: usize,
    pub simt_width: usize,
    /// Consecutive warps dealt to the same SM.
    pub warps_per_block: usize,
    pub l1: CacheGeometry,
    pub l2: CacheGeometry,
    pub n_mcs: usize,
    pub noc: NocModel,
    pub latencies: Latencies,
    pub intra: IntraConfig,
    pub inter: InterConfig,
    /// Cycles without any progress before the run is aborted.
    pub max_idle_cycles: u64,
    pub probe_availability: bool,
    /// Check table capacities every cycle (disables idle fast-forward).
    pub check_invariants: bool,
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_sms: 56,
            warp_size: 32,
            simt_width: 8,
            warps_per_block: 1,
            l1: CacheGeometry::l1_default(),
            l2: CacheGeometry::l2_default(),
            n_mcs: 8,
            noc: NocModel::default(),
            latencies: Latencies::default(),
            intra: IntraConfig::default(),
            inter: InterConfig::default(),
            max_idle_cycles: 1_000_000,
            probe_availability: true,
            check_invariants: false,
            trace: false,
        }
    }
}

impl SimConfig {
    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.intra.enabled = scheme.intra();
        self.inter.enabled = scheme.inter();
        self
    }

    pub fn scheme(&self) -> Scheme {
        match (self.intra.enabled, self.inter.enabled) {
            (false, false) => Scheme::Baseline,
            (true, false) => Scheme::Intra,
            (false, true) => Scheme::Inter,
            (true, true) => Scheme::Both,
        }
    }

    /// Cycles one full-warp instruction occupies the issue slot.
    pub fn issue_cost(&self) -> u64 {
        self.warp_size.div_ceil(self.simt_width) as u64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_sms == 0 || self.warp_size == 0 || self.simt_width == 0 || self.warps_per_block == 0 {
            return bad("sim.sms, sim.warp_size, sim.simt_width and sim.warps_per_block must be positive".into());
        }
        if self.simt_width > self.warp_size {
            return bad(format!(
                "SIMT width {} exceeds warp size {}",
                self.simt_width, self.warp_size
            ));
        }
        CacheGeometry::new(self.l1.capacity, self.l1.sets, self.l1.ways)?;
        CacheGeometry::new(self.l2.capacity, self.l2.sets, self.l2.ways)?;
        if self.l1.block_size() != self.l2.block_size() {
            return bad("L1 and L2 block sizes differ".into());
        }
        if self.n_mcs == 0 {
            return bad("mc.count must be positive".into());
        }
        self.noc.validate()?;
        if self.n_sms + self.n_mcs > self.noc.mesh_w * self.noc.mesh_h {
            return bad(format!(
                "{} SMs and {} MCs do not fit the {}x{} mesh",
                self.n_sms, self.n_mcs, self.noc.mesh_w, self.noc.mesh_h
            ));
        }
        let i = &self.intra;
        if i.table_entries == 0 || i.assist_latency == 0 || i.purge_period == 0 {
            return bad("intra.table_entries, intra.assist_latency and intra.purge_period must be positive".into());
        }
        if !(0.0..=1.0).contains(&i.purge_fraction) {
            return bad(format!("intra.purge_fraction {} outside [0, 1]", i.purge_fraction));
        }
        let x = &self.inter;
        if x.table_entries == 0 || x.clusters == 0 {
            return bad("inter.table_entries and inter.clusters must be positive".into());
        }
        if x.clusters > self.n_sms {
            return bad(format!("{} clusters cannot partition {} SMs", x.clusters, self.n_sms));
        }
        if self.n_sms.div_ceil(x.clusters) > crate::inter::MAX_CLUSTER_SIZE {
            return bad(format!(
                "{} clusters over {} SMs need an SM id field wider than 3 bits",
                x.clusters, self.n_sms
            ));
        }
        if self.max_idle_cycles == 0 {
            return bad("sim.max_idle_cycles must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_machine() {
        let c = SimConfig::default();
        assert_eq!((c.n_sms, c.n_mcs, c.issue_cost()), (56, 8, 4));
        assert_eq!((c.l1.sets, c.l1.ways, c.l1.capacity), (32, 4, 16384));
        assert!(c.validate().is_ok());
        assert_eq!(c.scheme(), Scheme::Baseline);
    }

    #[test]
    fn scheme_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(Scheme::parse(s.as_str()), Some(s));
            assert_eq!(SimConfig::default().with_scheme(s).scheme(), s);
        }
    }

    #[test]
    fn rejects_oversized_clusters() {
        let mut c = SimConfig::default();
        c.inter.clusters = 4;
        assert!(c.validate().is_err());
    }
}
