use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use opsim_core::config::{ExperimentConfig, Preset};
use opsim_core::experiment::{prepare_layer, run_experiment, sweep, ExperimentReport};
use opsim_core::workload::write_ops_csv;

#[derive(Parser)]
#[command(name = "opsim", version, about = "GPU near-data computing simulator for direct convolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run baseline plus the selected schemes on every layer of a workload.
    Run(RunArgs),
    /// Run several config files over one workload and merge the reports.
    Sweep(SweepArgs),
    /// Dump the vector-MAC op stream of one layer as CSV.
    Ops(OpsArgs),
}

#[derive(Args, Default)]
struct Overrides {
    /// Config file of `section.key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// lenet5, alexnet_conv, toy or custom.
    #[arg(long)]
    workload: Option<String>,
    /// Spatial shrink factor of the input feature maps.
    #[arg(long)]
    shrink: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` assignments, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        let mut assign = |k: &str, v: &str| {
            cfg.set(k, v).map_err(|e| anyhow::anyhow!("{k}: {e}"))
        };
        if let Some(w) = &self.workload {
            assign("workload.name", w)?;
        }
        if let Some(s) = self.shrink {
            assign("workload.shrink", &s.to_string())?;
        }
        if let Some(s) = self.seed {
            assign("sim.seed", &s.to_string())?;
        }
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{kv}`");
            };
            assign(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Overrides,
    /// baseline, intra, inter or both, using the configured table sizes.
    #[arg(long)]
    scheme: Vec<String>,
    /// intraSM_C1, intraSM_C2, interSM_C1, interSM_C2, combined_C1, combined_C2.
    #[arg(long)]
    preset: Vec<String>,
    /// Check every run against the reference convolution.
    #[arg(long)]
    verify: bool,
    /// Also emit the reuse histogram and availability per layer.
    #[arg(long)]
    characterize: bool,
    /// Write a cycle,sm,warp,event trace per run.
    #[arg(long)]
    trace: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// One config file per sweep point.
    #[arg(long = "config", required = false)]
    configs: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    verify: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct OpsArgs {
    #[command(flatten)]
    common: Overrides,
    /// Layer name; the first layer when omitted.
    #[arg(long)]
    layer: Option<String>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn finish(report: &ExperimentReport, out: &std::path::Path) -> Result<ExitCode> {
    report.write_to(out).with_context(|| format!("writing reports to {}", out.display()))?;
    print!("{}", opsim_core::metrics::render_csv(&[], &report.rows));
    if report.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &report.failures {
            eprintln!("FAIL {f}");
        }
        Ok(ExitCode::FAILURE)
    }
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let mut cfg = args.common.resolve()?;
    for s in args.scheme.iter().chain(&args.preset) {
        if Preset::named(s).is_none() {
            bail!("unknown scheme or preset `{s}`");
        }
        if !cfg.presets.contains(s) {
            cfg.presets.push(s.clone());
        }
    }
    cfg.verify |= args.verify;
    cfg.characterize |= args.characterize;
    cfg.trace |= args.trace;
    cfg.validate()?;
    let report = run_experiment(&cfg)?;
    finish(&report, &args.out)
}

fn run_sweep(args: SweepArgs) -> Result<ExitCode> {
    let mut cfgs = Vec::new();
    for p in &args.configs {
        let mut c = ExperimentConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?;
        c.verify |= args.verify;
        cfgs.push(c);
    }
    let report = sweep(&cfgs, args.threads)?;
    finish(&report, &args.out)
}

fn ops(args: OpsArgs) -> Result<ExitCode> {
    let cfg = args.common.resolve()?;
    cfg.validate()?;
    let layers = cfg.workload.layers()?;
    let idx = match &args.layer {
        Some(name) => layers
            .iter()
            .position(|l| &l.name == name)
            .with_context(|| format!("no layer `{name}` in workload {}", cfg.workload.name.as_str()))?,
        None => 0,
    };
    let inputs = prepare_layer(&cfg, &layers[idx], idx)?;
    let ops: Vec<_> = inputs.warps.iter().flat_map(|w| w.instruction_stream()).collect();
    match &args.out {
        Some(p) => write_ops_csv(std::io::BufWriter::new(std::fs::File::create(p)?), &ops)?,
        None => write_ops_csv(std::io::stdout().lock(), &ops)?,
    }
    Ok(ExitCode::SUCCESS)
}

/// A closed stdout (`opsim ops | head`) is not an error.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<std::io::Error>()
            .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Ops(a) => ops(a),
    };
    match result {
        Ok(code) => code,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use opsim_core::config::WorkloadName;

    #[test]
    fn overrides_win_over_defaults() {
        let o = Overrides {
            workload: Some("alexnet_conv".into()),
            shrink: Some(4),
            set: vec!["intra.table_entries=512".into()],
            ..Default::default()
        };
        let c = o.resolve().unwrap();
        assert_eq!(c.workload.name, WorkloadName::AlexnetConv);
        assert_eq!(c.workload.shrink(), 4);
        assert_eq!(c.sim.intra.table_entries, 512);
    }

    #[test]
    fn bad_assignment_is_reported() {
        let o = Overrides {
            set: vec!["l1.sets".into()],
            ..Default::default()
        };
        assert!(o.resolve().is_err());
    }

    #[test]
    fn command_line_parses() {
        Cli::try_parse_from(["opsim", "run", "--workload", "toy", "--preset", "combined_C1", "--verify"]).unwrap();
        assert!(Cli::try_parse_from(["opsim", "fly"]).is_err());
    }
}
