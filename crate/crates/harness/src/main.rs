use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use allencahn_harness::config::{
    self, AcceptanceFile, Overrides, ProbeFile, SimulateFile, SpatialFile, TemporalFile,
};
use allencahn_harness::report::{emit_probe, emit_report, StudyReport};
use allencahn_harness::{sim, study};

/// Finite-element Monte-Carlo harness for the stochastic Allen-Cahn equation.
#[derive(Parser)]
#[command(name = "allencahn", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run single-path simulations and dump per-checkpoint snapshots.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write the mesh as a plain-text node/element file.
        #[arg(long)]
        dump_mesh: bool,
    },
    /// Spatial convergence study (fixed time step, mesh family).
    SpatialStudy {
        #[command(flatten)]
        common: Common,
    },
    /// Temporal convergence study (tau ladder with h ~ sqrt(tau) coupling).
    TemporalStudy {
        #[command(flatten)]
        common: Common,
    },
    /// Stability probe for the discrete stochastic convolution.
    ProbeRegularity {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of Monte-Carlo paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            paths: self.paths,
            out: self.out.clone(),
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run() -> allencahn_harness::Result<bool> {
    match Cli::parse().cmd {
        Cmd::Simulate { common, dump_mesh } => {
            let mut cfg: SimulateFile = config::load(&common.config)?;
            cfg.apply(&common.overrides());
            let summary = sim::run_simulate(&cfg, dump_mesh)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            for p in &summary.paths {
                println!(
                    "path {}: {} snapshots, |Y_J|_L2 = {:.6e}, newton iters total {} max {}",
                    p.path_index, p.snapshots, p.final_l2, p.newton_iters_total, p.newton_iters_max
                );
            }
            println!(
                "wrote snapshots and run.json to {} ({:.2}s)",
                summary.output_dir.display(),
                summary.runtime_seconds
            );
            Ok(true)
        }
        Cmd::SpatialStudy { common } => {
            let mut cfg: SpatialFile = config::load(&common.config)?;
            cfg.apply(&common.overrides());
            let report = study::run_spatial_study(&cfg)?;
            finish_study(&report, &cfg.acceptance, Path::new(&cfg.output_dir))
        }
        Cmd::TemporalStudy { common } => {
            let mut cfg: TemporalFile = config::load(&common.config)?;
            cfg.apply(&common.overrides());
            let report = study::run_temporal_study(&cfg)?;
            finish_study(&report, &cfg.acceptance, Path::new(&cfg.output_dir))
        }
        Cmd::ProbeRegularity { common } => {
            let mut cfg: ProbeFile = config::load(&common.config)?;
            cfg.apply(&common.overrides());
            let (report, runtime) = study::run_probe(&cfg)?;
            let files = emit_probe(
                &report,
                serde_json::to_value(&cfg)?,
                &config::config_hash(&cfg),
                runtime,
                Path::new(&cfg.output_dir),
            )?;
            for row in &report.rows {
                println!(
                    "J = {:>6}: ratio = {:.6} (99% CI [{:.6}, {:.6}]){}",
                    row.steps,
                    row.ratio,
                    row.ci_low,
                    row.ci_high,
                    if row.degenerate { " [degenerate]" } else { "" }
                );
            }
            let spread = report.ratio_spread();
            match spread {
                Some(s) => println!("ratio spread (max/min) = {s:.4}"),
                None => println!("ratio spread undefined (degenerate rows)"),
            }
            for f in &files {
                println!("wrote {}", f.display());
            }
            let ok = match cfg.acceptance.max_ratio_spread {
                None => true,
                Some(limit) => match spread {
                    Some(s) if s <= limit => {
                        println!("acceptance: spread {s:.4} <= {limit} [met]");
                        true
                    }
                    _ => {
                        println!("acceptance: spread {spread:?} exceeds {limit} [NOT met]");
                        false
                    }
                },
            };
            Ok(ok)
        }
    }
}

fn finish_study(
    report: &StudyReport,
    acceptance: &AcceptanceFile,
    out: &Path,
) -> allencahn_harness::Result<bool> {
    let files = emit_report(report, out)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for s in &report.slopes {
        println!(
            "p = {:>4}, q = {:>4}: slope = {:+.4} (pairwise {})",
            s.p,
            s.q,
            s.slope,
            s.pairwise
                .iter()
                .map(|v| format!("{v:+.3}"))
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
    for f in &files {
        println!("wrote {}", f.display());
    }
    println!("runtime {:.2}s", report.runtime_seconds);

    let mut ok = true;
    if acceptance.min_slope.is_some() || acceptance.max_slope.is_some() {
        if report.slopes.is_empty() {
            println!("acceptance: slope thresholds set but no slopes fitted [NOT met]");
            ok = false;
        }
        for s in &report.slopes {
            if let Some(lo) = acceptance.min_slope {
                if !(s.slope >= lo) {
                    println!(
                        "acceptance: slope {:.4} for p={} q={} below {lo} [NOT met]",
                        s.slope, s.p, s.q
                    );
                    ok = false;
                }
            }
            if let Some(hi) = acceptance.max_slope {
                if !(s.slope <= hi) {
                    println!(
                        "acceptance: slope {:.4} for p={} q={} above {hi} [NOT met]",
                        s.slope, s.p, s.q
                    );
                    ok = false;
                }
            }
        }
        if ok {
            println!("acceptance: all slope thresholds met");
        }
    }
    Ok(ok)
}
