//! Counters of one run and the quantities derived from them.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::intra::PrecomputeStats;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Computations {
    pub normal: u64,
    pub predicted_used: u64,
    pub assigned: u64,
}

impl Computations {
    pub fn total(&self) -> u64 {
        self.normal + self.predicted_used + self.assigned
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct InterStats {
    pub forwards: u64,
    pub bounces: u64,
    /// Forwarded computations answered from the owner's Precompute Table.
    pub memo_reuses: u64,
    pub assign_lookups: u64,
    pub assign_hits: u64,
    pub registrations: u64,
    pub invalidations: u64,
    pub table_evictions: u64,
    pub fills_avoided: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Availability {
    pub misses: u64,
    pub found_elsewhere: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SimStats {
    pub total_cycles: u64,
    pub total_ops: u64,
    pub instructions_issued: u64,
    pub stall_cycles: Vec<u64>,
    pub assistant_cycles: Vec<u64>,
    pub l1_hits: u64,
    pub l1_misses: u64,
    pub l2_hits: u64,
    pub l2_misses: u64,
    pub dram_accesses: u64,
    pub noc_messages: u64,
    pub noc_flit_hops: u64,
    pub precompute_accesses: u64,
    pub assign_accesses: u64,
    pub computations: Computations,
    pub predictions: PrecomputeStats,
    pub inter: InterStats,
    pub availability: Availability,
    pub mac_ops: u64,
    pub tables_enabled: u64,
    pub capacity_checks: u64,
}

impl SimStats {
    pub fn total_stall_cycles(&self) -> u64 {
        self.stall_cycles.iter().sum()
    }
}

pub fn ipc(s: &SimStats) -> f64 {
    if s.total_cycles == 0 {
        0.0
    } else {
        s.instructions_issued as f64 / s.total_cycles as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergyWeights {
    pub l1_access: f64,
    pub l2_access: f64,
    pub dram_access: f64,
    pub noc_flit_hop: f64,
    pub table_access: f64,
    pub mac_op: f64,
    pub static_per_cycle_table: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        EnergyWeights {
            l1_access: 1.0,
            l2_access: 10.0,
            dram_access: 100.0,
            noc_flit_hop: 2.0,
            table_access: 1.0,
            mac_op: 1.0,
            static_per_cycle_table: 0.01,
        }
    }
}

impl EnergyWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.l1_access,
            self.l2_access,
            self.dram_access,
            self.noc_flit_hop,
            self.table_access,
            self.mac_op,
            self.static_per_cycle_table,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("energy weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Event-weighted proxy: dynamic events plus table leakage per cycle.
pub fn energy(s: &SimStats, w: &EnergyWeights) -> f64 {
    let l1 = (s.l1_hits + s.l1_misses) as f64;
    let l2 = (s.l2_hits + s.l2_misses) as f64;
    l1 * w.l1_access
        + l2 * w.l2_access
        + s.dram_accesses as f64 * w.dram_access
        + s.noc_flit_hops as f64 * w.noc_flit_hop
        + (s.precompute_accesses + s.assign_accesses) as f64 * w.table_access
        + s.mac_ops as f64 * w.mac_op
        + w.static_per_cycle_table * s.total_cycles as f64 * s.tables_enabled as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Normalized {
    pub ipc: f64,
    pub time: f64,
    pub stall: f64,
    pub energy: f64,
}

/// Ratios of `run` to `baseline`: IPC as run/baseline, and likewise for
/// execution time, stall time and energy.
pub fn normalize(run: &SimStats, baseline: &SimStats, w: &EnergyWeights) -> Result<Normalized> {
    if baseline.total_cycles == 0 {
        return Err(Error::Metrics("baseline ran for zero cycles".into()));
    }
    if run.total_ops != baseline.total_ops {
        return Err(Error::Metrics(format!(
            "run covers {} ops, baseline {}",
            run.total_ops, baseline.total_ops
        )));
    }
    let ratio = |a: f64, b: f64| if b == 0.0 { if a == 0.0 { 1.0 } else { f64::INFINITY } } else { a / b };
    Ok(Normalized {
        ipc: ratio(ipc(run), ipc(baseline)),
        time: ratio(run.total_cycles as f64, baseline.total_cycles as f64),
        stall: ratio(run.total_stall_cycles() as f64, baseline.total_stall_cycles() as f64),
        energy: ratio(energy(run, w), energy(baseline, w)),
    })
}

pub fn prediction_accuracy(s: &SimStats) -> f64 {
    if s.predictions.made == 0 {
        0.0
    } else {
        s.predictions.used as f64 / s.predictions.made as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Distribution {
    pub normal: f64,
    pub predicted: f64,
    pub assigned: f64,
}

pub fn computation_distribution(s: &SimStats) -> Distribution {
    let c = s.computations;
    let total = c.total();
    if total == 0 {
        return Distribution {
            normal: 1.0,
            predicted: 0.0,
            assigned: 0.0,
        };
    }
    let t = total as f64;
    let predicted = c.predicted_used as f64 / t;
    let assigned = c.assigned as f64 / t;
    Distribution {
        normal: 1.0 - predicted - assigned,
        predicted,
        assigned,
    }
}

pub fn inter_sm_availability(s: &SimStats) -> f64 {
    if s.availability.misses == 0 {
        0.0
    } else {
        s.availability.found_elsewhere as f64 / s.availability.misses as f64
    }
}

/// Identities every finished run must satisfy.
pub fn check_conservation(s: &SimStats) -> Result<()> {
    let c = s.computations;
    if c.total() != s.total_ops {
        return Err(Error::Metrics(format!(
            "computations {} + {} + {} != {} ops",
            c.normal, c.predicted_used, c.assigned, s.total_ops
        )));
    }
    if s.instructions_issued != s.total_ops {
        return Err(Error::Metrics(format!(
            "{} instructions issued for {} ops",
            s.instructions_issued, s.total_ops
        )));
    }
    if s.availability.found_elsewhere > s.availability.misses {
        return Err(Error::Metrics("found_elsewhere exceeds misses".into()));
    }
    let p = s.predictions;
    if p.used > p.completed || p.completed > p.made {
        return Err(Error::Metrics(format!(
            "prediction counts out of order: used {} completed {} made {}",
            p.used, p.completed, p.made
        )));
    }
    Ok(())
}

pub const CSV_HEADER: &str = "layer,scheme,table_cfg,cycles,ipc,ipc_norm,time_norm,stall_norm,energy_norm,pred_acc,frac_normal,frac_pred,frac_assigned,avail";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub layer: String,
    pub scheme: String,
    pub table_cfg: String,
    pub cycles: u64,
    pub ipc: f64,
    pub norm: Normalized,
    pub pred_acc: f64,
    pub dist: Distribution,
    pub avail: f64,
}

impl ReportRow {
    pub fn new(
        layer: &str,
        scheme: &str,
        table_cfg: &str,
        run: &SimStats,
        baseline: &SimStats,
        w: &EnergyWeights,
    ) -> Result<Self> {
        Ok(ReportRow {
            layer: layer.to_string(),
            scheme: scheme.to_string(),
            table_cfg: table_cfg.to_string(),
            cycles: run.total_cycles,
            ipc: ipc(run),
            norm: normalize(run, baseline, w)?,
            pred_acc: prediction_accuracy(run),
            dist: computation_distribution(run),
            avail: inter_sm_availability(run),
        })
    }

    pub fn to_csv(&self) -> String {
        let f = |x: f64| format!("{x:.6}");
        [
            self.layer.clone(),
            self.scheme.clone(),
            self.table_cfg.clone(),
            self.cycles.to_string(),
            f(self.ipc),
            f(self.norm.ipc),
            f(self.norm.time),
            f(self.norm.stall),
            f(self.norm.energy),
            f(self.pred_acc),
            f(self.dist.normal),
            f(self.dist.predicted),
            f(self.dist.assigned),
            f(self.avail),
        ]
        .join(",")
    }
}

/// Header comment lines, the column header, then one line per row.
pub fn render_csv(header_comments: &[String], rows: &[ReportRow]) -> String {
    let mut out = String::new();
    for c in header_comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(cycles: u64, ops: u64) -> SimStats {
        SimStats {
            total_cycles: cycles,
            total_ops: ops,
            instructions_issued: ops,
            stall_cycles: vec![cycles / 2, cycles / 4],
            computations: Computations {
                normal: ops,
                ..Default::default()
            },
            l1_hits: 10,
            l1_misses: 3,
            l2_hits: 2,
            l2_misses: 1,
            dram_accesses: 1,
            noc_flit_hops: 40,
            mac_ops: ops,
            ..Default::default()
        }
    }

    #[test]
    fn identical_runs_normalize_to_one() {
        let s = stats(1000, 100);
        let n = normalize(&s, &s, &EnergyWeights::default()).unwrap();
        assert_eq!((n.ipc, n.time, n.stall, n.energy), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn time_ratio_is_cycle_ratio() {
        let n = normalize(&stats(800, 100), &stats(1000, 100), &EnergyWeights::default()).unwrap();
        assert!((n.time - 0.8).abs() < 1e-12);
        assert!((n.ipc - 1.25).abs() < 1e-12);
    }

    #[test]
    fn zero_baseline_is_an_error() {
        assert!(normalize(&stats(10, 0), &stats(0, 0), &EnergyWeights::default()).is_err());
    }

    #[test]
    fn accuracy_definition() {
        let mut s = stats(1, 1);
        assert_eq!(prediction_accuracy(&s), 0.0);
        s.predictions.made = 100;
        s.predictions.used = 26;
        assert!((prediction_accuracy(&s) - 0.26).abs() < 1e-12);
    }

    #[test]
    fn baseline_distribution_is_all_normal() {
        let d = computation_distribution(&stats(10, 10));
        assert_eq!((d.normal, d.predicted, d.assigned), (1.0, 0.0, 0.0));
    }

    #[test]
    fn energy_of_nothing_is_zero() {
        assert_eq!(energy(&SimStats::default(), &EnergyWeights::default()), 0.0);
    }

    #[test]
    fn energy_hand_count() {
        let s = stats(100, 5);
        // l1 13, l2 3*10, dram 100, noc 40*2, mac 5
        assert_eq!(energy(&s, &EnergyWeights::default()), 13.0 + 30.0 + 100.0 + 80.0 + 5.0);
        let mut t = s.clone();
        t.tables_enabled = 2;
        t.precompute_accesses = 7;
        assert!((energy(&t, &EnergyWeights::default()) - (228.0 + 7.0 + 0.01 * 100.0 * 2.0)).abs() < 1e-9);
    }

    #[test]
    fn availability_fraction() {
        let mut s = stats(1, 1);
        assert_eq!(inter_sm_availability(&s), 0.0);
        s.availability = Availability {
            misses: 8,
            found_elsewhere: 6,
        };
        assert_eq!(inter_sm_availability(&s), 0.75);
    }

    #[test]
    fn conservation_catches_lost_ops() {
        let mut s = stats(10, 10);
        assert!(check_conservation(&s).is_ok());
        s.computations.normal = 9;
        assert!(check_conservation(&s).is_err());
    }

    #[test]
    fn csv_row_format() {
        let b = stats(1000, 100);
        let r = ReportRow::new("C1", "baseline", "-", &b, &b, &EnergyWeights::default()).unwrap();
        assert_eq!(
            r.to_csv(),
            "C1,baseline,-,1000,0.100000,1.000000,1.000000,1.000000,1.000000,0.000000,1.000000,0.000000,0.000000,0.000000"
        );
        let text = render_csv(&["seed = 1".into()], std::slice::from_ref(&r));
        assert_eq!(text.lines().count(), 3);
        assert_eq!(render_csv(&[], std::slice::from_ref(&r)), render_csv(&[], &[r]));
        assert_eq!(CSV_HEADER.split(',').count(), 14);
    }

    proptest! {
        #[test]
        fn dynamic_energy_is_linear(h in 0u64..1000, m in 0u64..1000, d in 0u64..1000, f in 0u64..1000, t in 0u64..1000, k in 0u64..1000) {
            let s = SimStats { l1_hits: h, l1_misses: m, l2_hits: m, dram_accesses: d, noc_flit_hops: f, precompute_accesses: t, mac_ops: k, ..Default::default() };
            let s2 = SimStats { l1_hits: 2 * h, l1_misses: 2 * m, l2_hits: 2 * m, dram_accesses: 2 * d, noc_flit_hops: 2 * f, precompute_accesses: 2 * t, mac_ops: 2 * k, ..Default::default() };
            let w = EnergyWeights::default();
            prop_assert!((energy(&s2, &w) - 2.0 * energy(&s, &w)).abs() < 1e-6);
        }

        #[test]
        fn fractions_sum_to_one(n in 0u64..10_000, p in 0u64..10_000, a in 0u64..10_000) {
            let s = SimStats { computations: Computations { normal: n, predicted_used: p, assigned: a }, ..Default::default() };
            let d = computation_distribution(&s);
            prop_assert!((d.normal + d.predicted + d.assigned - 1.0).abs() < 1e-12);
            for x in [d.normal, d.predicted, d.assigned] {
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&x));
            }
        }
    }
}
