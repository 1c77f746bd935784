//! `simulate` subcommand: single-path runs with snapshot and mesh dumps.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use allencahn_core::fem::{lq_norm, m_norm, Quadrature};
use allencahn_core::mesh::write_mesh_text;
use allencahn_core::noise::generate_paths;
use allencahn_core::scheme::{SchemeConfig, Stepper};
use allencahn_core::FeFunction64;

use crate::config::{config_hash, SimulateFile};
use crate::error::Result;
use crate::report::write_snapshot_csv;
use crate::study; // initial-state helper shares the study's sine product

#[derive(Debug, serde::Serialize)]
pub struct PathSummary {
    pub path_index: u64,
    /// Exact L2 norm (through the mass matrix) of the final state.
    pub final_l2: f64,
    /// (q, ||Y_J||_q) for each configured exponent.
    pub final_lq: Vec<(f64, f64)>,
    pub newton_iters_total: usize,
    pub newton_iters_max: usize,
    pub snapshots: usize,
}

#[derive(Debug, serde::Serialize)]
pub struct SimSummary {
    pub config_hash: String,
    pub output_dir: PathBuf,
    pub warnings: Vec<String>,
    pub paths: Vec<PathSummary>,
    pub runtime_seconds: f64,
}

pub fn run_simulate(cfg: &SimulateFile, dump_mesh: bool) -> Result<SimSummary> {
    cfg.validate()?;
    let start = Instant::now();
    let model = cfg.model.to_model()?;
    let scheme = SchemeConfig {
        t_horizon: cfg.t_horizon,
        steps: cfg.steps,
        n: cfg.n,
        cubic_enabled: cfg.model.cubic,
        reaction_coeff: cfg.model.reaction,
        q_list: cfg.q_list.clone(),
        p_list: vec![2.0],
        solver: cfg.solver.to_solver(),
        allow_tau_above_h2: cfg.allow_tau_above_h2,
    };
    let warnings: Vec<String> = scheme.tau_warning().into_iter().collect();
    let stepper = Stepper::new(scheme, model.clone())?;
    let y0 = match cfg.initial.as_str() {
        "zero" => FeFunction64::zero(stepper.mesh().clone()),
        _ => stepper.initial_state(study::sin_product)?,
    };

    let out = Path::new(&cfg.output_dir);
    fs::create_dir_all(out)?;
    let quad = Quadrature::degree5();
    let mut paths_out = Vec::with_capacity(cfg.paths);
    for pi in cfg.path_index..cfg.path_index + cfg.paths as u64 {
        let paths = generate_paths(&model, cfg.master_seed, pi, cfg.steps, cfg.t_horizon)?;
        let traj = stepper.simulate_path(&y0, &paths, cfg.checkpoint_stride)?;
        for (j, state) in traj.checkpoints() {
            let file = out.join(format!("snapshot-p{pi}-j{j:06}.csv"));
            write_snapshot_csv(
                &file,
                cfg.n,
                cfg.steps,
                cfg.t_horizon,
                cfg.master_seed,
                pi,
                *j,
                state.coeffs(),
            )?;
        }
        let y_end = traj.final_state();
        let final_lq = cfg
            .q_list
            .iter()
            .map(|&q| Ok((q, lq_norm(y_end, q, &quad)?)))
            .collect::<Result<Vec<_>>>()?;
        paths_out.push(PathSummary {
            path_index: pi,
            final_l2: m_norm(stepper.mass(), y_end.coeffs()),
            final_lq,
            newton_iters_total: traj.newton_iters().iter().sum(),
            newton_iters_max: traj.newton_iters().iter().copied().max().unwrap_or(0),
            snapshots: traj.checkpoints().len(),
        });
    }

    if dump_mesh {
        let mut f = fs::File::create(out.join("mesh.txt"))?;
        write_mesh_text(stepper.mesh(), &mut f)?;
    }

    let summary = SimSummary {
        config_hash: config_hash(cfg),
        output_dir: out.to_owned(),
        warnings,
        paths: paths_out,
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    let body = serde_json::json!({
        "kind": "simulate",
        "config_hash": summary.config_hash,
        "warnings": summary.warnings,
        "paths": summary.paths,
        "runtime_seconds": summary.runtime_seconds,
        "config": serde_json::to_value(cfg)?,
    });
    let mut json = serde_json::to_string_pretty(&body)?;
    json.push('\n');
    fs::write(out.join("run.json"), json)?;
    Ok(summary)
}
