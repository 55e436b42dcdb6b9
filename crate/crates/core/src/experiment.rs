//! Runs every requested preset on every layer of a workload and collects the
//! reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{check_conservation, inter_sm_availability, render_csv, ReportRow, SimStats};
use crate::oracle::{compare, reference_convolution, Comparison, MemoryImage};
use crate::smcore::{run_simulation, TraceEvent};
use crate::workload::{enumerate_ops, map_to_warps_blocked, reuse_histogram, LayerLayout, LayerSpec};

#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub layer: String,
    pub preset: String,
    pub table_cfg: String,
    /// `None` when verification was not requested.
    pub verified: Option<bool>,
    pub stats: SimStats,
}

#[derive(Clone, Debug, Serialize)]
pub struct Characterization {
    pub layer: String,
    pub ops: u64,
    pub pairs: usize,
    /// Pair counts per reuse bucket, in bucket order.
    pub buckets: Vec<(String, u64)>,
    pub frac_pairs_above_100: f64,
    pub availability: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub config_echo: String,
    pub rows: Vec<ReportRow>,
    pub runs: Vec<RunRecord>,
    pub characterization: Vec<Characterization>,
    pub failures: Vec<String>,
    /// `(file stem, cycle,sm,warp,event lines)` per run when tracing.
    pub traces: Vec<(String, String)>,
}

#[derive(Serialize)]
struct CounterDump<'a> {
    runs: &'a [RunRecord],
    characterization: &'a [Characterization],
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn csv(&self) -> String {
        let header: Vec<String> = self.config_echo.lines().map(String::from).collect();
        render_csv(&header, &self.rows)
    }

    pub fn counters_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&CounterDump {
            runs: &self.runs,
            characterization: &self.characterization,
        })?;
        s.push('\n');
        Ok(s)
    }

    pub fn characterization_csv(&self) -> String {
        let mut o = String::from("layer,ops,pairs,pairs_1_100,pairs_101_800,pairs_800_plus,frac_above_100,avail\n");
        for c in &self.characterization {
            let b = |i: usize| c.buckets.get(i).map_or(0, |x| x.1);
            let _ = writeln!(
                o,
                "{},{},{},{},{},{},{:.6},{:.6}",
                c.layer,
                c.ops,
                c.pairs,
                b(0),
                b(1),
                b(2),
                c.frac_pairs_above_100,
                c.availability
            );
        }
        o
    }

    /// Writes `report.csv`, `counters.json`, `config.echo`, and when present
    /// `characterize.csv` and `trace_*.csv`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), self.csv())?;
        std::fs::write(dir.join("counters.json"), self.counters_json()?)?;
        std::fs::write(dir.join("config.echo"), &self.config_echo)?;
        if !self.characterization.is_empty() {
            std::fs::write(dir.join("characterize.csv"), self.characterization_csv())?;
        }
        for (stem, text) in &self.traces {
            std::fs::write(dir.join(format!("trace_{stem}.csv")), text)?;
        }
        Ok(())
    }
}

fn trace_csv(events: &[TraceEvent]) -> String {
    let mut o = String::from("cycle,sm,warp,event\n");
    for e in events {
        let _ = writeln!(o, "{},{},{},{}", e.cycle, e.sm, e.warp, e.event);
    }
    o
}

/// Per-layer seed so that layers get distinct but reproducible data.
pub fn layer_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

/// Prepared inputs of one layer.
pub struct LayerInputs {
    pub layer: LayerSpec,
    pub layout: LayerLayout,
    pub ops: Vec<crate::workload::VectorMacOp>,
    pub warps: Vec<crate::workload::WarpProgram>,
    pub image: MemoryImage,
}

pub fn prepare_layer(cfg: &ExperimentConfig, layer: &LayerSpec, index: usize) -> Result<LayerInputs> {
    let layout = LayerLayout::new(layer)?;
    let ops = enumerate_ops(layer, &layout)?;
    let warps = map_to_warps_blocked(&ops, cfg.sim.warp_size, cfg.sim.n_sms, cfg.sim.warps_per_block);
    let image = MemoryImage::generate(layer, cfg.arith, layer_seed(cfg.seed, index));
    Ok(LayerInputs {
        layer: layer.clone(),
        layout,
        ops,
        warps,
        image,
    })
}

/// Runs baseline and every requested preset on every layer. Simulation
/// faults abort; verification and conservation failures are collected.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let presets = cfg.presets()?;
    let mut report = ExperimentReport {
        config_echo: cfg.echo(),
        rows: Vec::new(),
        runs: Vec::new(),
        characterization: Vec::new(),
        failures: Vec::new(),
        traces: Vec::new(),
    };
    for (idx, layer) in cfg.workload.layers()?.iter().enumerate() {
        let inputs = prepare_layer(cfg, layer, idx)?;
        let reference = if cfg.verify {
            Some(reference_convolution(layer, &inputs.image)?)
        } else {
            None
        };
        let mut baseline: Option<SimStats> = None;
        for p in &presets {
            let mut sim_cfg = p.apply(&cfg.sim);
            sim_cfg.trace = cfg.trace;
            let out = run_simulation(&sim_cfg, layer, &inputs.layout, &inputs.image, &inputs.warps)?;
            let verified = reference.as_ref().map(|r| match compare(&out.output, r, cfg.arith) {
                Comparison::Pass => true,
                Comparison::Fail(why) => {
                    report.failures.push(format!("{} / {}: {why}", layer.name, p.name));
                    false
                }
            });
            if let Err(e) = check_conservation(&out.stats) {
                report.failures.push(format!("{} / {}: {e}", layer.name, p.name));
            }
            let base = baseline.get_or_insert_with(|| out.stats.clone());
            let table_cfg = p.table_cfg(&cfg.sim);
            report.rows.push(ReportRow::new(
                &layer.name,
                &p.name,
                &table_cfg,
                &out.stats,
                base,
                &cfg.energy,
            )?);
            if cfg.trace {
                report
                    .traces
                    .push((format!("{}_{}", layer.name, p.name), trace_csv(&out.trace)));
            }
            if cfg.characterize && p.name == "baseline" {
                let h = reuse_histogram(&inputs.ops, cfg.sim.l1.block_size());
                report.characterization.push(Characterization {
                    layer: layer.name.clone(),
                    ops: h.total_ops(),
                    pairs: h.pairs(),
                    buckets: h.buckets.iter().map(|b| (b.label(), b.pairs)).collect(),
                    frac_pairs_above_100: h.fraction_above(100),
                    availability: inter_sm_availability(&out.stats),
                });
            }
            report.runs.push(RunRecord {
                layer: layer.name.clone(),
                preset: p.name.clone(),
                table_cfg,
                verified,
                stats: out.stats,
            });
        }
    }
    Ok(report)
}

/// Runs several configurations of one workload, on up to `threads` threads,
/// and merges their reports in configuration order. Rows repeated verbatim
/// (typically the shared baseline) are kept once.
pub fn sweep(configs: &[ExperimentConfig], threads: usize) -> Result<ExperimentReport> {
    if let Some(first) = configs.first() {
        for (i, c) in configs.iter().enumerate().skip(1) {
            if c.workload != first.workload || c.seed != first.seed || c.arith != first.arith {
                return Err(Error::Config(format!(
                    "sweep config {i} uses a different workload, seed or arithmetic mode than config 0"
                )));
            }
        }
    }
    let threads = threads.max(1);
    let mut results: Vec<Option<Result<ExperimentReport>>> = (0..configs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = results
            .chunks_mut(configs.len().div_ceil(threads).max(1))
            .enumerate()
            .map(|(ci, slot)| {
                let start = ci * configs.len().div_ceil(threads).max(1);
                scope.spawn(move || {
                    for (k, r) in slot.iter_mut().enumerate() {
                        *r = Some(run_experiment(&configs[start + k]));
                    }
                })
            })
            .collect();
        for h in chunks {
            h.join().expect("sweep worker panicked");
        }
    });
    let mut merged = ExperimentReport {
        config_echo: String::new(),
        rows: Vec::new(),
        runs: Vec::new(),
        characterization: Vec::new(),
        failures: Vec::new(),
        traces: Vec::new(),
    };
    let mut seen_rows = std::collections::HashSet::new();
    for (i, r) in results.into_iter().enumerate() {
        let r = r.expect("every config ran")?;
        for line in r.config_echo.lines() {
            let _ = writeln!(merged.config_echo, "config[{i}] {line}");
        }
        for row in r.rows {
            if seen_rows.insert(row.to_csv()) {
                merged.rows.push(row);
            }
        }
        merged.runs.extend(r.runs);
        if i == 0 {
            merged.characterization = r.characterization;
        }
        merged.failures.extend(r.failures.into_iter().map(|f| format!("config[{i}] {f}")));
        merged
            .traces
            .extend(r.traces.into_iter().map(|(s, t)| (format!("c{i}_{s}"), t)));
    }
    Ok(merged)
}
