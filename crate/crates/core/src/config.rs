//! Experiment configuration: flat `section.key = value` lines, `#` comments.
//!
//! Every key has a default; [`ExperimentConfig::echo`] prints the fully
//! resolved configuration in the same syntax, and parsing that text yields
//! the same configuration again.

use std::fmt::Write as _;

use crate::cachehier::CacheGeometry;
use crate::error::{Error, Result};
use crate::inter::EvictScope;
use crate::metrics::EnergyWeights;
use crate::oracle::ArithMode;
use crate::smcore::{Scheme, SimConfig};
use crate::workload::{
    alexnet_conv_layers_scaled, backward_specs, lenet5_layers_scaled, toy_layer, LayerSpec, Pass,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WorkloadName {
    Lenet5,
    AlexnetConv,
    Toy,
    Custom,
}

impl WorkloadName {
    pub fn as_str(self) -> &'static str {
        match self {
            WorkloadName::Lenet5 => "lenet5",
            WorkloadName::AlexnetConv => "alexnet_conv",
            WorkloadName::Toy => "toy",
            WorkloadName::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lenet5" => Some(WorkloadName::Lenet5),
            "alexnet_conv" | "alexnet" => Some(WorkloadName::AlexnetConv),
            "toy" => Some(WorkloadName::Toy),
            "custom" => Some(WorkloadName::Custom),
            _ => None,
        }
    }

    pub fn default_shrink(self) -> usize {
        match self {
            WorkloadName::Lenet5 => 2,
            WorkloadName::AlexnetConv => 8,
            WorkloadName::Toy | WorkloadName::Custom => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadConfig {
    pub name: WorkloadName,
    /// `None` picks the workload's default.
    pub shrink: Option<usize>,
    pub backward: bool,
    /// Layer names to keep; empty keeps all.
    pub only: Vec<String>,
    pub custom: Vec<LayerSpec>,
}

impl WorkloadConfig {
    pub fn shrink(&self) -> usize {
        self.shrink.unwrap_or(self.name.default_shrink())
    }

    /// The layers to simulate, backward passes appended after each forward
    /// layer when enabled.
    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        let base = match self.name {
            WorkloadName::Lenet5 => lenet5_layers_scaled(self.shrink()),
            WorkloadName::AlexnetConv => alexnet_conv_layers_scaled(self.shrink()),
            WorkloadName::Toy => vec![toy_layer()],
            WorkloadName::Custom => self.custom.clone(),
        };
        for name in &self.only {
            if !base.iter().any(|l| &l.name == name) {
                return Err(Error::Config(format!(
                    "workload {} has no layer `{name}`",
                    self.name.as_str()
                )));
            }
        }
        let mut out = Vec::new();
        for l in base {
            if !self.only.is_empty() && !self.only.contains(&l.name) {
                continue;
            }
            l.validate()?;
            let bwd = if self.backward && l.pass == Pass::Forward {
                backward_specs(&l)?
            } else {
                Vec::new()
            };
            out.push(l);
            out.extend(bwd);
        }
        if out.is_empty() {
            return Err(Error::Config("workload has no layers".into()));
        }
        Ok(out)
    }
}

/// A named scheme plus table sizes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Preset {
    pub name: String,
    pub scheme: Scheme,
    /// `None` keeps the configured size.
    pub precompute_entries: Option<usize>,
    pub assign_entries: Option<usize>,
}

impl Preset {
    pub fn named(name: &str) -> Option<Self> {
        let p = |scheme, pre, asg| Preset {
            name: name.to_string(),
            scheme,
            precompute_entries: pre,
            assign_entries: asg,
        };
        Some(match name {
            "baseline" => p(Scheme::Baseline, None, None),
            "intra" => p(Scheme::Intra, None, None),
            "inter" => p(Scheme::Inter, None, None),
            "both" | "combined" => p(Scheme::Both, None, None),
            "intraSM_C1" => p(Scheme::Intra, Some(256), None),
            "intraSM_C2" => p(Scheme::Intra, Some(512), None),
            "interSM_C1" => p(Scheme::Inter, None, Some(512)),
            "interSM_C2" => p(Scheme::Inter, None, Some(1024)),
            "combined_C1" | "both_C1" => p(Scheme::Both, Some(256), Some(512)),
            "combined_C2" | "both_C2" => p(Scheme::Both, Some(512), Some(1024)),
            _ => return None,
        })
    }

    pub fn apply(&self, base: &SimConfig) -> SimConfig {
        let mut c = base.clone().with_scheme(self.scheme);
        if let Some(n) = self.precompute_entries {
            c.intra.table_entries = n;
        }
        if let Some(n) = self.assign_entries {
            c.inter.table_entries = n;
        }
        c
    }

    /// Short label of the table sizes in effect, e.g. `P256+A512`.
    pub fn table_cfg(&self, base: &SimConfig) -> String {
        let c = self.apply(base);
        let mut parts = Vec::new();
        if c.intra.enabled {
            parts.push(format!("P{}", c.intra.table_entries));
        }
        if c.inter.enabled {
            parts.push(format!("A{}", c.inter.table_entries));
        }
        if parts.is_empty() {
            "-".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub energy: EnergyWeights,
    pub workload: WorkloadConfig,
    pub seed: u64,
    pub arith: ArithMode,
    pub presets: Vec<String>,
    pub verify: bool,
    pub characterize: bool,
    pub trace: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sim: SimConfig::default(),
            energy: EnergyWeights::default(),
            workload: WorkloadConfig {
                name: WorkloadName::Lenet5,
                shrink: None,
                backward: false,
                only: Vec::new(),
                custom: Vec::new(),
            },
            seed: 1,
            arith: ArithMode::Int32,
            presets: vec!["baseline".into()],
            verify: false,
            characterize: false,
            trace: false,
        }
    }
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("expected a boolean, got `{v}`")),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.replace('_', "")
        .parse()
        .map_err(|_| format!("expected a number, got `{v}`"))
}

fn parse_list(v: &str) -> Vec<String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn parse_layer(name: &str, v: &str) -> std::result::Result<LayerSpec, String> {
    let parts = parse_list(v);
    if parts.len() != 8 && parts.len() != 9 {
        return Err(format!(
            "layer `{name}` needs in_c,out_c,h,w,fh,fw,stride,pad[,pass], got `{v}`"
        ));
    }
    let n: Vec<usize> = parts[..8]
        .iter()
        .map(|p| parse_num(p))
        .collect::<std::result::Result<_, _>>()?;
    let mut l = LayerSpec::forward(name, n[0], n[1], n[2], n[3], n[4], n[5], n[6], n[7]);
    if let Some(p) = parts.get(8) {
        l.pass = Pass::parse(p).ok_or_else(|| format!("unknown pass `{p}`"))?;
    }
    l.validate().map_err(|e| e.to_string())?;
    Ok(l)
}

impl ExperimentConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: i + 1,
                    reason: format!("expected `key = value`, got `{line}`"),
                });
            };
            cfg.set(k.trim(), v.trim())
                .map_err(|reason| Error::Parse { line: i + 1, reason })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let s = &mut self.sim;
        let kb = |v: &str| parse_num::<usize>(v).map(|x| x * 1024);
        match key {
            "sim.sms" => s.n_sms = parse_num(v)?,
            "sim.warp_size" => s.warp_size = parse_num(v)?,
            "sim.simt_width" => s.simt_width = parse_num(v)?,
            "sim.warps_per_block" => s.warps_per_block = parse_num(v)?,
            "sim.scheduler" => {
                if v != "gto" {
                    return Err(format!("only the `gto` scheduler is modeled, got `{v}`"));
                }
            }
            "sim.max_idle_cycles" => s.max_idle_cycles = parse_num(v)?,
            "sim.probe_availability" => s.probe_availability = parse_bool(v)?,
            "sim.check_invariants" => s.check_invariants = parse_bool(v)?,
            "sim.seed" => self.seed = parse_num(v)?,
            "sim.arith" => {
                self.arith = ArithMode::parse(v).ok_or_else(|| format!("unknown arithmetic mode `{v}`"))?
            }
            "l1.kb" => s.l1.capacity = kb(v)?,
            "l1.sets" => s.l1.sets = parse_num(v)?,
            "l1.ways" => s.l1.ways = parse_num(v)?,
            "l1.latency" => s.latencies.l1 = parse_num(v)?,
            "l2.kb" => s.l2.capacity = kb(v)?,
            "l2.sets" => s.l2.sets = parse_num(v)?,
            "l2.ways" => s.l2.ways = parse_num(v)?,
            "l2.latency" => s.latencies.l2 = parse_num(v)?,
            "dram.latency" => s.latencies.dram = parse_num(v)?,
            "mc.count" => s.n_mcs = parse_num(v)?,
            "noc.width" => s.noc.mesh_w = parse_num(v)?,
            "noc.height" => s.noc.mesh_h = parse_num(v)?,
            "noc.channel_bits" => s.noc.channel_width_bits = parse_num(v)?,
            "noc.flit_bytes" => s.noc.flit_size = parse_num(v)?,
            "noc.hop_latency" => s.noc.per_hop_latency = parse_num(v)?,
            "noc.pipeline_stages" => s.noc.pipeline_stages = parse_num(v)?,
            "intra.enabled" => s.intra.enabled = parse_bool(v)?,
            "intra.table_entries" => s.intra.table_entries = parse_num(v)?,
            "intra.assist_latency" => s.intra.assist_latency = parse_num(v)?,
            "intra.purge_period" => s.intra.purge_period = parse_num(v)?,
            "intra.purge_fraction" => s.intra.purge_fraction = parse_num(v)?,
            "intra.hit_cost" => s.intra.hit_cost = parse_num(v)?,
            "inter.enabled" => s.inter.enabled = parse_bool(v)?,
            "inter.clusters" => s.inter.clusters = parse_num(v)?,
            "inter.table_entries" => s.inter.table_entries = parse_num(v)?,
            "inter.forward_latency" => s.inter.forward_latency = parse_num(v)?,
            "inter.max_outstanding" => s.inter.max_outstanding = parse_num(v)?,
            "inter.evict_scope" => {
                s.inter.evict_scope =
                    EvictScope::parse(v).ok_or_else(|| format!("unknown eviction scope `{v}`"))?
            }
            "energy.l1" => self.energy.l1_access = parse_num(v)?,
            "energy.l2" => self.energy.l2_access = parse_num(v)?,
            "energy.dram" => self.energy.dram_access = parse_num(v)?,
            "energy.noc_flit_hop" => self.energy.noc_flit_hop = parse_num(v)?,
            "energy.table" => self.energy.table_access = parse_num(v)?,
            "energy.mac" => self.energy.mac_op = parse_num(v)?,
            "energy.static_table" => self.energy.static_per_cycle_table = parse_num(v)?,
            "workload.name" => {
                self.workload.name =
                    WorkloadName::parse(v).ok_or_else(|| format!("unknown workload `{v}`"))?
            }
            "workload.shrink" => self.workload.shrink = Some(parse_num(v)?),
            "workload.backward" => self.workload.backward = parse_bool(v)?,
            "workload.layers" => self.workload.only = parse_list(v),
            "run.presets" => {
                self.presets = parse_list(v);
                for p in &self.presets {
                    if Preset::named(p).is_none() {
                        return Err(format!("unknown preset `{p}`"));
                    }
                }
            }
            "run.verify" => self.verify = parse_bool(v)?,
            "run.characterize" => self.characterize = parse_bool(v)?,
            "run.trace" => self.trace = parse_bool(v)?,
            _ => {
                if let Some(name) = key.strip_prefix("layer.") {
                    if name.is_empty() || self.workload.custom.iter().any(|l| l.name == name) {
                        return Err(format!("layer name `{name}` is empty or repeated"));
                    }
                    self.workload.custom.push(parse_layer(name, v)?);
                    self.workload.name = WorkloadName::Custom;
                } else {
                    return Err(format!("unknown key `{key}`"));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.workload.shrink == Some(0) {
            return Err(Error::Config("workload.shrink must be at least 1".into()));
        }
        if self.workload.name == WorkloadName::Custom && self.workload.custom.is_empty() {
            return Err(Error::Config("custom workload needs at least one `layer.<name>` line".into()));
        }
        self.sim.validate()?;
        CacheGeometry::new(self.sim.l1.capacity, self.sim.l1.sets, self.sim.l1.ways)?;
        self.energy.validate()?;
        self.presets()?;
        Ok(())
    }

    /// Presets to run: baseline first, then the requested ones in order, then
    /// the scheme selected by `intra.enabled`/`inter.enabled` if not listed.
    pub fn presets(&self) -> Result<Vec<Preset>> {
        let mut out = vec![Preset::named("baseline").expect("baseline preset")];
        let mut names = self.presets.clone();
        let implied = self.sim.scheme();
        if implied != Scheme::Baseline && !names.iter().any(|n| n == implied.as_str()) {
            names.push(implied.as_str().to_string());
        }
        for n in names {
            let p = Preset::named(&n).ok_or_else(|| Error::Config(format!("unknown preset `{n}`")))?;
            if !out.iter().any(|q| q.name == p.name) {
                out.push(p);
            }
        }
        Ok(out)
    }

    /// The resolved configuration in parseable form.
    pub fn echo(&self) -> String {
        let s = &self.sim;
        let e = &self.energy;
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        kv("sim.sms", s.n_sms.to_string());
        kv("sim.warp_size", s.warp_size.to_string());
        kv("sim.simt_width", s.simt_width.to_string());
        kv("sim.warps_per_block", s.warps_per_block.to_string());
        kv("sim.scheduler", "gto".into());
        kv("sim.max_idle_cycles", s.max_idle_cycles.to_string());
        kv("sim.probe_availability", s.probe_availability.to_string());
        kv("sim.check_invariants", s.check_invariants.to_string());
        kv("sim.seed", self.seed.to_string());
        kv("sim.arith", self.arith.as_str().into());
        kv("l1.kb", (s.l1.capacity / 1024).to_string());
        kv("l1.sets", s.l1.sets.to_string());
        kv("l1.ways", s.l1.ways.to_string());
        kv("l1.latency", s.latencies.l1.to_string());
        kv("l2.kb", (s.l2.capacity / 1024).to_string());
        kv("l2.sets", s.l2.sets.to_string());
        kv("l2.ways", s.l2.ways.to_string());
        kv("l2.latency", s.latencies.l2.to_string());
        kv("dram.latency", s.latencies.dram.to_string());
        kv("mc.count", s.n_mcs.to_string());
        kv("noc.width", s.noc.mesh_w.to_string());
        kv("noc.height", s.noc.mesh_h.to_string());
        kv("noc.channel_bits", s.noc.channel_width_bits.to_string());
        kv("noc.flit_bytes", s.noc.flit_size.to_string());
        kv("noc.hop_latency", s.noc.per_hop_latency.to_string());
        kv("noc.pipeline_stages", s.noc.pipeline_stages.to_string());
        kv("intra.enabled", s.intra.enabled.to_string());
        kv("intra.table_entries", s.intra.table_entries.to_string());
        kv("intra.assist_latency", s.intra.assist_latency.to_string());
        kv("intra.purge_period", s.intra.purge_period.to_string());
        kv("intra.purge_fraction", s.intra.purge_fraction.to_string());
        kv("intra.hit_cost", s.intra.hit_cost.to_string());
        kv("inter.enabled", s.inter.enabled.to_string());
        kv("inter.clusters", s.inter.clusters.to_string());
        kv("inter.table_entries", s.inter.table_entries.to_string());
        kv("inter.forward_latency", s.inter.forward_latency.to_string());
        kv("inter.evict_scope", s.inter.evict_scope.as_str().into());
        kv("inter.max_outstanding", s.inter.max_outstanding.to_string());
        kv("energy.l1", e.l1_access.to_string());
        kv("energy.l2", e.l2_access.to_string());
        kv("energy.dram", e.dram_access.to_string());
        kv("energy.noc_flit_hop", e.noc_flit_hop.to_string());
        kv("energy.table", e.table_access.to_string());
        kv("energy.mac", e.mac_op.to_string());
        kv("energy.static_table", e.static_per_cycle_table.to_string());
        for l in &self.workload.custom {
            kv(
                &format!("layer.{}", l.name),
                format!(
                    "{},{},{},{},{},{},{},{},{}",
                    l.in_channels,
                    l.out_channels,
                    l.in_height,
                    l.in_width,
                    l.filter_h,
                    l.filter_w,
                    l.stride,
                    l.padding,
                    l.pass.as_str()
                ),
            );
        }
        kv("workload.name", self.workload.name.as_str().into());
        kv("workload.shrink", self.workload.shrink().to_string());
        kv("workload.backward", self.workload.backward.to_string());
        kv("workload.layers", self.workload.only.join(","));
        kv("run.presets", self.presets.join(","));
        kv("run.verify", self.verify.to_string());
        kv("run.characterize", self.characterize.to_string());
        kv("run.trace", self.trace.to_string());
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_machine_defaults() {
        let c = ExperimentConfig::parse_str("").unwrap();
        assert_eq!(c.sim.n_sms, 56);
        assert_eq!((c.sim.l1.capacity, c.sim.l1.sets, c.sim.l1.ways), (16 * 1024, 32, 4));
        assert_eq!((c.sim.n_mcs, c.sim.noc.mesh_w, c.sim.noc.mesh_h), (8, 8, 8));
        assert_eq!(c.workload.shrink(), 2);
        assert_eq!(c.presets().unwrap().len(), 1);
    }

    #[test]
    fn table_size_key() {
        let c = ExperimentConfig::parse_str("intra.table_entries = 512\n").unwrap();
        assert_eq!(c.sim.intra.table_entries, 512);
    }

    #[test]
    fn zero_sets_rejected_with_line() {
        let err = ExperimentConfig::parse_str("# header\nl1.sets = 0\n").unwrap_err();
        assert!(matches!(err, Error::Config(_) | Error::Parse { .. }), "{err}");
        let err = ExperimentConfig::parse_str("\nl1.set = 4\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = ExperimentConfig::parse_str("sim.sms = many").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(ExperimentConfig::parse_str("workload.shrink = 0").is_err());
        assert!(ExperimentConfig::parse_str("run.presets = fastest").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let text = "workload.name = alexnet_conv\nrun.presets = intraSM_C2, combined_C1\nenergy.static_table = 0.02\nlayer.x = 2,3,9,9,3,3,1,1\nsim.arith = float32\n";
        let c = ExperimentConfig::parse_str(text).unwrap();
        let again = ExperimentConfig::parse_str(&c.echo()).unwrap();
        assert_eq!(again.echo(), c.echo());
        assert_eq!(again.workload.layers().unwrap(), c.workload.layers().unwrap());
        assert_eq!(again.sim, c.sim);
        assert_eq!(again.energy, c.energy);
    }

    #[test]
    fn baseline_always_first() {
        let c = ExperimentConfig::parse_str("run.presets = combined_C2, baseline, intraSM_C1\ninter.enabled = true").unwrap();
        let names: Vec<String> = c.presets().unwrap().into_iter().map(|p| p.name).collect();
        assert_eq!(names, ["baseline", "combined_C2", "intraSM_C1", "inter"]);
    }

    #[test]
    fn preset_table_sizes() {
        let base = SimConfig::default();
        let p = Preset::named("combined_C2").unwrap();
        let c = p.apply(&base);
        assert!(c.intra.enabled && c.inter.enabled);
        assert_eq!((c.intra.table_entries, c.inter.table_entries), (512, 1024));
        assert_eq!(p.table_cfg(&base), "P512+A1024");
        assert_eq!(Preset::named("interSM_C1").unwrap().table_cfg(&base), "A512");
        assert_eq!(Preset::named("baseline").unwrap().table_cfg(&base), "-");
    }

    #[test]
    fn workload_layers() {
        let mut c = ExperimentConfig::default();
        assert_eq!(c.workload.layers().unwrap().len(), 5);
        c.workload.only = vec!["C1".into(), "C2".into()];
        c.workload.backward = true;
        let names: Vec<String> = c.workload.layers().unwrap().into_iter().map(|l| l.name).collect();
        assert_eq!(names, ["C1", "C1_bwd_input", "C1_bwd_weight", "C2", "C2_bwd_input", "C2_bwd_weight"]);
        c.workload.only = vec!["C9".into()];
        assert!(c.workload.layers().is_err());
    }
}
