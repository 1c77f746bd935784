//! Monte-Carlo convergence study drivers.
//!
//! Both studies walk every resolution level through the same Brownian path
//! in lockstep (coarser levels consume block-summed increments of the fine
//! path), so the reported error isolates discretization from sampling. Paths
//! run in parallel; per-path results are collected in path order, so reports
//! are byte-identical regardless of worker count.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;

use allencahn_core::fem::{assemble_mass, assemble_stiffness, lq_error, lq_norm, m_norm, Quadrature};
use allencahn_core::mesh::{build_structured_mesh, interpolate, prolongate, Mesh};
use allencahn_core::noise::{coarsen, generate_paths, BrownianPaths, ModeKind, NoiseMode, NoiseModel};
use allencahn_core::probe::{stability_ratio, ProbeConfig, ProbeReport};
use allencahn_core::reference::smallest_eigenpair;
use allencahn_core::scheme::{SchemeConfig, Stepper, Trajectory};
use allencahn_core::FeFunction64;

use crate::config::{config_hash, ProbeFile, SpatialFile, TemporalFile};
use crate::error::{Error, Result};
use crate::rates::fit_rate;
use crate::report::{SlopeFit, StudyReport, StudyRow};

pub(crate) fn sin_product(x: [f64; 3]) -> f64 {
    (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin()
}

/// Monte-Carlo p-th moment: ((1/M) sum s^p)^{1/p}.
pub fn moment(samples: &[f64], p: f64) -> f64 {
    let m = samples.len() as f64;
    (samples.iter().map(|s| s.powf(p)).sum::<f64>() / m).powf(1.0 / p)
}

/// Nonparametric bootstrap 95% interval for `moment`, 1000 resamples,
/// deterministic given the seed.
pub fn bootstrap_ci(samples: &[f64], p: f64, seed: u64) -> (f64, f64) {
    const RESAMPLES: usize = 1000;
    let m = samples.len();
    if m < 2 {
        let v = samples.first().copied().unwrap_or(0.0);
        return (v, v);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(RESAMPLES);
    let mut draw = vec![0.0; m];
    for _ in 0..RESAMPLES {
        for slot in draw.iter_mut() {
            let u = (rng.next_u64() >> 11) as f64 * 2f64.powi(-53);
            *slot = samples[((u * m as f64) as usize).min(m - 1)];
        }
        stats.push(moment(&draw, p));
    }
    stats.sort_by(f64::total_cmp);
    let lo = stats[(0.025 * (RESAMPLES - 1) as f64).round() as usize];
    let hi = stats[(0.975 * (RESAMPLES - 1) as f64).round() as usize];
    (lo, hi)
}

fn bootstrap_seed(master: u64, level: usize, pi: usize, qi: usize) -> u64 {
    master
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(((level as u64) << 32) ^ ((pi as u64) << 16) ^ qi as u64)
}

/// Coarsens a fine path by `factor` and cross-checks every coarse increment
/// against a direct re-summation of its fine block. The tolerance only
/// covers the reordering between pairwise and sequential summation.
pub fn coupled_paths(fine: &BrownianPaths<f64>, factor: usize) -> Result<BrownianPaths<f64>> {
    let coarse = coarsen(fine, factor)?;
    for mode in 0..fine.mode_count() {
        let f = fine.mode_increments(mode);
        let c = coarse.mode_increments(mode);
        for (block, &cv) in c.iter().enumerate() {
            let seg = &f[block * factor..(block + 1) * factor];
            let fold: f64 = seg.iter().sum();
            let scale = seg.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
            if (fold - cv).abs() > 1e-12 * scale {
                return Err(Error::CouplingMismatch {
                    mode,
                    block,
                    expected: fold,
                    got: cv,
                });
            }
        }
    }
    Ok(coarse)
}

/// Difference of a coarse state against the reference state, prolonged onto
/// the reference mesh when the meshes differ.
fn diff_on_reference(
    y: &FeFunction64,
    y_ref: &FeFunction64,
    ref_mesh: &Arc<Mesh<f64>>,
) -> Result<FeFunction64> {
    if y.mesh().n() == ref_mesh.n() {
        Ok(y.sub(y_ref))
    } else {
        Ok(prolongate(y, ref_mesh)?.sub(y_ref))
    }
}

/// max over shared checkpoints (j >= 1) of the L^q distance between a coarse
/// trajectory and a reference trajectory on the reference mesh.
///
/// The coarse checkpoint at step j is matched with the reference checkpoint
/// at step j * (tau_coarse / tau_ref); a missing partner or a non-integer
/// step ratio is an error.
pub fn sup_error_over_checkpoints(
    coarse: &[(usize, FeFunction64)],
    coarse_tau: f64,
    reference: &[(usize, FeFunction64)],
    ref_tau: f64,
    q: f64,
) -> Result<f64> {
    let (Some(_), Some(first_ref)) = (coarse.first(), reference.first()) else {
        return Err(Error::Invalid("empty checkpoint list".into()));
    };
    let rho = coarse_tau / ref_tau;
    let rho_int = rho.round();
    if rho_int < 1.0 || (rho - rho_int).abs() > 1e-9 * rho {
        return Err(Error::Invalid(format!(
            "time grids are not nested: tau ratio {rho} is not a positive integer"
        )));
    }
    let rho_int = rho_int as usize;
    let ref_mesh = first_ref.1.mesh().clone();
    let quad = Quadrature::degree5();
    let mut sup = 0.0f64;
    for (j, y) in coarse {
        if *j == 0 {
            continue;
        }
        let rj = j * rho_int;
        let partner = reference
            .iter()
            .find(|(k, _)| *k == rj)
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "checkpoint grids do not match: no reference state at step {rj}"
                ))
            })?;
        let diff = diff_on_reference(y, &partner.1, &ref_mesh)?;
        sup = sup.max(lq_norm(&diff, q, &quad)?);
    }
    Ok(sup)
}

/// Per-path pathwise-uniform error statistic between stored trajectories.
pub fn pathwise_uniform_error(
    coarse: &Trajectory<f64>,
    reference: &Trajectory<f64>,
    q: f64,
) -> Result<f64> {
    sup_error_over_checkpoints(
        coarse.checkpoints(),
        coarse.tau(),
        reference.checkpoints(),
        reference.tau(),
        q,
    )
}

struct LevelMeta {
    label: u32,
    h: f64,
    tau: f64,
}

/// Moments, bootstrap intervals and slope fits from per-path sup errors
/// (`sups[path][level][q_index]`).
fn aggregate(
    kind: &str,
    meta: &[LevelMeta],
    sups: &[Vec<Vec<f64>>],
    p_list: &[f64],
    q_list: &[f64],
    master_seed: u64,
) -> (Vec<StudyRow>, Vec<SlopeFit>, Vec<String>) {
    let m = sups.len();
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    let mut warnings = Vec::new();
    for (pi, &p) in p_list.iter().enumerate() {
        for (qi, &q) in q_list.iter().enumerate() {
            let mut errors = Vec::with_capacity(meta.len());
            for (li, lm) in meta.iter().enumerate() {
                let samples: Vec<f64> = (0..m).map(|mi| sups[mi][li][qi]).collect();
                let error = moment(&samples, p);
                let (ci_low, ci_high) =
                    bootstrap_ci(&samples, p, bootstrap_seed(master_seed, li, pi, qi));
                errors.push(error);
                rows.push(StudyRow {
                    level: lm.label,
                    h: lm.h,
                    tau: lm.tau,
                    p,
                    q,
                    error,
                    ci_low,
                    ci_high,
                });
            }
            if errors.len() >= 2 && errors[errors.len() - 1] >= errors[0] {
                warnings.push(format!(
                    "no monotone refinement for p={p} q={q}: finest error {:.3e} >= coarsest {:.3e}",
                    errors[errors.len() - 1],
                    errors[0]
                ));
            }
            let resolution = |lm: &LevelMeta| if kind == "spatial" { lm.h } else { lm.tau };
            let pairs: Vec<(f64, f64)> = meta
                .iter()
                .zip(&errors)
                .map(|(lm, &e)| (resolution(lm), e))
                .collect();
            match fit_rate(&pairs) {
                Ok(fit) => slopes.push(SlopeFit {
                    p,
                    q,
                    slope: fit.slope,
                    intercept: fit.intercept,
                    pairwise: fit.pairwise,
                }),
                Err(e) => warnings.push(format!("slope fit skipped for p={p} q={q}: {e}")),
            }
        }
    }
    (rows, slopes, warnings)
}

fn initial_state(stepper: &Stepper<f64>, name: &str) -> Result<FeFunction64> {
    match name {
        "zero" => Ok(FeFunction64::zero(stepper.mesh().clone())),
        _ => Ok(stepper.initial_state(sin_product)?),
    }
}

fn scheme_for(
    cfg_model_cubic: bool,
    reaction: f64,
    n: u32,
    steps: usize,
    t_horizon: f64,
    q_list: &[f64],
    p_list: &[f64],
    solver: &allencahn_core::linalg::SolverConfig<f64>,
    allow_tau_above_h2: bool,
) -> SchemeConfig<f64> {
    SchemeConfig {
        t_horizon,
        steps,
        n,
        cubic_enabled: cfg_model_cubic,
        reaction_coeff: reaction,
        q_list: q_list.to_vec(),
        p_list: p_list.to_vec(),
        solver: solver.clone(),
        allow_tau_above_h2,
    }
}

fn norm_rule_note() -> String {
    "Lq norms and errors use the fixed degree-5 (14-point) tetrahedral quadrature rule".into()
}

/// Spatial study: every level advances with the same time step and the same
/// increments; errors are measured against a fine-mesh reference run, or
/// against the closed-form heat+reaction solution when
/// `reference = "exact-heat"`.
pub fn run_spatial_study(cfg: &SpatialFile) -> Result<StudyReport> {
    cfg.validate()?;
    let start = Instant::now();
    let model = cfg.model.to_model()?;
    let solver = cfg.solver.to_solver();
    let exact = cfg.reference == "exact-heat";

    let mut warnings = Vec::new();
    let mut steppers = Vec::with_capacity(cfg.levels.len());
    for &n in &cfg.levels {
        let sc = scheme_for(
            cfg.model.cubic,
            cfg.model.reaction,
            n,
            cfg.steps,
            cfg.t_horizon,
            &cfg.q_list,
            &cfg.p_list,
            &solver,
            cfg.allow_tau_above_h2,
        );
        if let Some(w) = sc.tau_warning() {
            warnings.push(w);
        }
        steppers.push(Stepper::new(sc, model.clone())?);
    }
    let ref_stepper = if exact {
        None
    } else {
        let sc = scheme_for(
            cfg.model.cubic,
            cfg.model.reaction,
            cfg.reference_n,
            cfg.steps,
            cfg.t_horizon,
            &cfg.q_list,
            &cfg.p_list,
            &solver,
            cfg.allow_tau_above_h2,
        );
        if let Some(w) = sc.tau_warning() {
            warnings.push(w);
        }
        Some(Stepper::new(sc, model.clone())?)
    };

    let y0s: Vec<FeFunction64> = steppers
        .iter()
        .map(|s| initial_state(s, &cfg.initial))
        .collect::<Result<_>>()?;
    let y0_ref = match &ref_stepper {
        Some(s) => Some(initial_state(s, &cfg.initial)?),
        None => None,
    };

    let sups: Vec<Vec<Vec<f64>>> = (0..cfg.m_paths)
        .into_par_iter()
        .map(|path| spatial_path(cfg, &model, &steppers, ref_stepper.as_ref(), &y0s, &y0_ref, path))
        .collect::<Result<_>>()?;

    let tau = cfg.tau();
    let meta: Vec<LevelMeta> = cfg
        .levels
        .iter()
        .map(|&n| LevelMeta {
            label: n,
            h: Mesh::<f64>::h_of(n),
            tau,
        })
        .collect();
    let (rows, slopes, mut agg_warnings) = aggregate(
        "spatial",
        &meta,
        &sups,
        &cfg.p_list,
        &cfg.q_list,
        cfg.master_seed,
    );
    warnings.append(&mut agg_warnings);

    let runtime = start.elapsed().as_secs_f64();
    Ok(StudyReport {
        kind: "spatial".into(),
        reference: cfg.reference.clone(),
        config_hash: config_hash(cfg),
        master_seed: cfg.master_seed,
        m_paths: cfg.m_paths,
        rows,
        slopes,
        warnings,
        notes: vec![norm_rule_note()],
        runtime_seconds: runtime,
        runtime_per_path_seconds: runtime / cfg.m_paths as f64,
        config: serde_json::to_value(cfg)?,
    })
}

#[allow(clippy::too_many_arguments)]
fn spatial_path(
    cfg: &SpatialFile,
    model: &NoiseModel<f64>,
    steppers: &[Stepper<f64>],
    ref_stepper: Option<&Stepper<f64>>,
    y0s: &[FeFunction64],
    y0_ref: &Option<FeFunction64>,
    path: usize,
) -> Result<Vec<Vec<f64>>> {
    let fine = generate_paths(model, cfg.master_seed, path as u64, cfg.steps, cfg.t_horizon)?;
    let paths = coupled_paths(&fine, 1)?;
    let quad = Quadrature::degree5();
    let tau = cfg.tau();
    let mut ys = y0s.to_vec();
    let mut y_ref = y0_ref.clone();
    let mut sup = vec![vec![0.0f64; cfg.q_list.len()]; steppers.len()];
    for j in 0..cfg.steps {
        let db = paths.step_increments(j);
        for (li, stepper) in steppers.iter().enumerate() {
            ys[li] = stepper
                .step(&ys[li], &db)
                .map_err(|e| Error::PathFailed {
                    level: format!("n={}", cfg.levels[li]),
                    path: path as u64,
                    source: e,
                })?
                .0;
        }
        if let (Some(rs), Some(yr)) = (ref_stepper, y_ref.as_mut()) {
            *yr = rs
                .step(yr, &db)
                .map_err(|e| Error::PathFailed {
                    level: format!("n={} (reference)", cfg.reference_n),
                    path: path as u64,
                    source: e,
                })?
                .0;
        }
        let jn = j + 1;
        if jn % cfg.checkpoint_stride == 0 || jn == cfg.steps {
            let t = tau * jn as f64;
            for (li, y) in ys.iter().enumerate() {
                if let Some(yr) = &y_ref {
                    let diff = diff_on_reference(y, yr, yr.mesh())?;
                    for (qi, &q) in cfg.q_list.iter().enumerate() {
                        sup[li][qi] = sup[li][qi].max(lq_norm(&diff, q, &quad)?);
                    }
                } else {
                    let amp = ((cfg.model.reaction - 3.0 * PI * PI) * t).exp();
                    for (qi, &q) in cfg.q_list.iter().enumerate() {
                        let e = lq_error(y, |x| amp * sin_product(x), q, &quad)?;
                        sup[li][qi] = sup[li][qi].max(e);
                    }
                }
            }
        }
    }
    Ok(sup)
}

/// Temporal study with tau_l = T 4^{-l} on the n0 2^l mesh, against a
/// fine-tau reference run (`reference = "mesh"`) or the exact transform
/// solution of the linear multiplicative model (`reference = "exact-linear"`).
pub fn run_temporal_study(cfg: &TemporalFile) -> Result<StudyReport> {
    cfg.validate()?;
    if cfg.reference == "exact-linear" {
        return run_linear_oracle(cfg);
    }
    let start = Instant::now();
    let model = cfg.model.to_model()?;
    let solver = cfg.solver.to_solver();

    let ref_steps = 1usize << (2 * cfg.ref_level);
    let mut warnings = Vec::new();
    let mut steppers = Vec::with_capacity(cfg.levels.len());
    let mut substeps = Vec::with_capacity(cfg.levels.len());
    for &l in &cfg.levels {
        let sc = scheme_for(
            cfg.model.cubic,
            cfg.model.reaction,
            cfg.level_n(l),
            cfg.level_steps(l),
            cfg.t_horizon,
            &cfg.q_list,
            &cfg.p_list,
            &solver,
            cfg.allow_tau_above_h2,
        );
        if let Some(w) = sc.tau_warning() {
            warnings.push(w);
        }
        steppers.push(Stepper::new(sc, model.clone())?);
        substeps.push(1usize << (2 * (cfg.ref_level - l)));
    }
    let ref_sc = scheme_for(
        cfg.model.cubic,
        cfg.model.reaction,
        cfg.reference_n(),
        ref_steps,
        cfg.t_horizon,
        &cfg.q_list,
        &cfg.p_list,
        &solver,
        cfg.allow_tau_above_h2,
    );
    if let Some(w) = ref_sc.tau_warning() {
        warnings.push(w);
    }
    let ref_stepper = Stepper::new(ref_sc, model.clone())?;

    let y0s: Vec<FeFunction64> = steppers
        .iter()
        .map(|s| initial_state(s, &cfg.initial))
        .collect::<Result<_>>()?;
    let y0_ref = initial_state(&ref_stepper, &cfg.initial)?;

    let sups: Vec<Vec<Vec<f64>>> = (0..cfg.m_paths)
        .into_par_iter()
        .map(|path| {
            temporal_path(
                cfg,
                &model,
                &steppers,
                &substeps,
                &ref_stepper,
                &y0s,
                &y0_ref,
                ref_steps,
                path,
            )
        })
        .collect::<Result<_>>()?;

    let meta: Vec<LevelMeta> = cfg
        .levels
        .iter()
        .map(|&l| LevelMeta {
            label: l,
            h: Mesh::<f64>::h_of(cfg.level_n(l)),
            tau: cfg.t_horizon / cfg.level_steps(l) as f64,
        })
        .collect();
    let (rows, slopes, mut agg_warnings) = aggregate(
        "temporal",
        &meta,
        &sups,
        &cfg.p_list,
        &cfg.q_list,
        cfg.master_seed,
    );
    warnings.append(&mut agg_warnings);

    let runtime = start.elapsed().as_secs_f64();
    Ok(StudyReport {
        kind: "temporal".into(),
        reference: cfg.reference.clone(),
        config_hash: config_hash(cfg),
        master_seed: cfg.master_seed,
        m_paths: cfg.m_paths,
        rows,
        slopes,
        warnings,
        notes: vec![norm_rule_note()],
        runtime_seconds: runtime,
        runtime_per_path_seconds: runtime / cfg.m_paths as f64,
        config: serde_json::to_value(cfg)?,
    })
}

#[allow(clippy::too_many_arguments)]
fn temporal_path(
    cfg: &TemporalFile,
    model: &NoiseModel<f64>,
    steppers: &[Stepper<f64>],
    substeps: &[usize],
    ref_stepper: &Stepper<f64>,
    y0s: &[FeFunction64],
    y0_ref: &FeFunction64,
    ref_steps: usize,
    path: usize,
) -> Result<Vec<Vec<f64>>> {
    let fine = generate_paths(model, cfg.master_seed, path as u64, ref_steps, cfg.t_horizon)?;
    let coarse: Vec<BrownianPaths<f64>> = substeps
        .iter()
        .map(|&f| coupled_paths(&fine, f))
        .collect::<Result<_>>()?;
    let quad = Quadrature::degree5();
    let ref_mesh = ref_stepper.mesh().clone();
    let mut ys = y0s.to_vec();
    let mut y_ref = y0_ref.clone();
    let mut sup = vec![vec![0.0f64; cfg.q_list.len()]; steppers.len()];
    for j in 0..ref_steps {
        let db_ref = fine.step_increments(j);
        y_ref = ref_stepper
            .step(&y_ref, &db_ref)
            .map_err(|e| Error::PathFailed {
                level: format!("n={} (reference)", cfg.reference_n()),
                path: path as u64,
                source: e,
            })?
            .0;
        let jn = j + 1;
        for (li, stepper) in steppers.iter().enumerate() {
            if jn % substeps[li] != 0 {
                continue;
            }
            let k = jn / substeps[li] - 1;
            let db = coarse[li].step_increments(k);
            ys[li] = stepper
                .step(&ys[li], &db)
                .map_err(|e| Error::PathFailed {
                    level: format!("l={} (n={})", cfg.levels[li], cfg.level_n(cfg.levels[li])),
                    path: path as u64,
                    source: e,
                })?
                .0;
            let diff = diff_on_reference(&ys[li], &y_ref, &ref_mesh)?;
            for (qi, &q) in cfg.q_list.iter().enumerate() {
                sup[li][qi] = sup[li][qi].max(lq_norm(&diff, q, &quad)?);
            }
        }
    }
    Ok(sup)
}

/// Temporal rates against the exact transform solution of
/// dy = (Delta_h y + r y) dt + sqrt(lambda) y dbeta on a fixed mesh.
///
/// Started from the principal discrete eigenvector e (Delta_h e = -mu e,
/// normalized in L2), the exact pathwise solution stays on span{e}:
/// y(t) = exp(sqrt(lambda) beta(t) - lambda t / 2 + (r - mu) t) e.
fn run_linear_oracle(cfg: &TemporalFile) -> Result<StudyReport> {
    let start = Instant::now();
    if cfg.n0 < 2 {
        return Err(Error::Invalid(
            "exact-linear needs n0 >= 2 (interior dofs on the fixed mesh)".into(),
        ));
    }
    let model = cfg.model.to_model()?;
    let solver = cfg.solver.to_solver();
    let lambda = cfg.model.modes[0].lambda;
    let reaction = cfg.model.reaction;

    let mesh = build_structured_mesh::<f64>(cfg.n0)?;
    let stiffness = assemble_stiffness(&mesh)?;
    let mass = assemble_mass(&mesh)?;
    let (mu, mut evec) = smallest_eigenpair(&stiffness, &mass);
    let scale = 1.0 / m_norm(&mass, &evec);
    for c in evec.iter_mut() {
        *c *= scale;
    }
    let e_fe = FeFunction64::from_coeffs(mesh.clone(), evec)?;

    let mut warnings = Vec::new();
    let mut steppers = Vec::with_capacity(cfg.levels.len());
    for &l in &cfg.levels {
        let sc = scheme_for(
            false,
            reaction,
            cfg.n0,
            cfg.level_steps(l),
            cfg.t_horizon,
            &cfg.q_list,
            &cfg.p_list,
            &solver,
            cfg.allow_tau_above_h2,
        );
        if let Some(w) = sc.tau_warning() {
            warnings.push(w);
        }
        steppers.push(Stepper::with_mesh(sc, model.clone(), mesh.clone())?);
    }
    let lmax = *cfg.levels.last().expect("validated nonempty");
    let fine_steps = cfg.level_steps(lmax);

    let sups: Vec<Vec<Vec<f64>>> = (0..cfg.m_paths)
        .into_par_iter()
        .map(|path| {
            oracle_path(
                cfg, &model, &steppers, &e_fe, mu, lambda, reaction, fine_steps, path,
            )
        })
        .collect::<Result<_>>()?;

    let meta: Vec<LevelMeta> = cfg
        .levels
        .iter()
        .map(|&l| LevelMeta {
            label: l,
            h: Mesh::<f64>::h_of(cfg.n0),
            tau: cfg.t_horizon / cfg.level_steps(l) as f64,
        })
        .collect();
    let (rows, slopes, mut agg_warnings) = aggregate(
        "temporal",
        &meta,
        &sups,
        &cfg.p_list,
        &cfg.q_list,
        cfg.master_seed,
    );
    warnings.append(&mut agg_warnings);

    let runtime = start.elapsed().as_secs_f64();
    Ok(StudyReport {
        kind: "temporal".into(),
        reference: cfg.reference.clone(),
        config_hash: config_hash(cfg),
        master_seed: cfg.master_seed,
        m_paths: cfg.m_paths,
        rows,
        slopes,
        warnings,
        notes: vec![
            norm_rule_note(),
            format!("exact-linear oracle on the fixed n={} mesh, mu_h = {mu:.6}", cfg.n0),
        ],
        runtime_seconds: runtime,
        runtime_per_path_seconds: runtime / cfg.m_paths as f64,
        config: serde_json::to_value(cfg)?,
    })
}

#[allow(clippy::too_many_arguments)]
fn oracle_path(
    cfg: &TemporalFile,
    model: &NoiseModel<f64>,
    steppers: &[Stepper<f64>],
    e_fe: &FeFunction64,
    mu: f64,
    lambda: f64,
    reaction: f64,
    fine_steps: usize,
    path: usize,
) -> Result<Vec<Vec<f64>>> {
    let fine = generate_paths(model, cfg.master_seed, path as u64, fine_steps, cfg.t_horizon)?;
    let quad = Quadrature::degree5();
    let sqrt_lambda = lambda.sqrt();
    let mut sup = vec![vec![0.0f64; cfg.q_list.len()]; steppers.len()];
    for (li, stepper) in steppers.iter().enumerate() {
        let steps = cfg.level_steps(cfg.levels[li]);
        let tau = cfg.t_horizon / steps as f64;
        let paths = coupled_paths(&fine, fine_steps / steps)?;
        let mut y = e_fe.clone();
        let mut beta = 0.0f64;
        for k in 0..steps {
            let db = paths.step_increments(k);
            y = stepper
                .step(&y, &db)
                .map_err(|e| Error::PathFailed {
                    level: format!("l={} (n={})", cfg.levels[li], cfg.n0),
                    path: path as u64,
                    source: e,
                })?
                .0;
            beta += db[0];
            let t = tau * (k + 1) as f64;
            let s = (sqrt_lambda * beta - 0.5 * lambda * t + (reaction - mu) * t).exp();
            let mut diff = y.clone();
            diff.axpy(-s, e_fe);
            for (qi, &q) in cfg.q_list.iter().enumerate() {
                sup[li][qi] = sup[li][qi].max(lq_norm(&diff, q, &quad)?);
            }
        }
    }
    Ok(sup)
}

/// Runs the discrete stochastic convolution stability probe described by the
/// config file; returns the report and the wall-clock runtime.
pub fn run_probe(cfg: &ProbeFile) -> Result<(ProbeReport, f64)> {
    cfg.validate()?;
    let start = Instant::now();
    let mesh = build_structured_mesh::<f64>(cfg.n)?;
    let mut fields = Vec::with_capacity(cfg.modes.len());
    let mut modes = Vec::with_capacity(cfg.modes.len());
    for m in &cfg.modes {
        let field = match m.integrand.as_str() {
            "ones" => FeFunction64::from_coeffs(mesh.clone(), vec![1.0; mesh.dof_count()])?,
            _ => interpolate(&mesh, sin_product)?,
        };
        fields.push(field);
        modes.push(NoiseMode {
            lambda: m.lambda,
            kind: ModeKind::Identity,
        });
    }
    let model = NoiseModel::new(modes, 1.0)?;
    let pcfg = ProbeConfig {
        p: cfg.p,
        q: cfg.q,
        j_list: cfg.j_list.clone(),
        n: cfg.n,
        m_paths: cfg.m_paths,
        t_horizon: cfg.t_horizon,
        master_seed: cfg.master_seed,
        solver: cfg.solver.to_solver(),
    };
    let report = stability_ratio(&pcfg, &model, |mode, _t| Ok(fields[mode].clone()))?;
    Ok((report, start.elapsed().as_secs_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moment_matches_hand_computation() {
        let samples = [3.0, 4.0];
        assert!((moment(&samples, 2.0) - (12.5f64).sqrt()).abs() <= 1e-15);
        let constant = [0.7; 9];
        assert!((moment(&constant, 16.0) - 0.7).abs() <= 1e-13);
    }

    #[test]
    fn bootstrap_is_deterministic_and_brackets_the_estimate() {
        let samples: Vec<f64> = (0..40).map(|i| 1.0 + 0.01 * (i % 7) as f64).collect();
        let a = bootstrap_ci(&samples, 2.0, 5);
        let b = bootstrap_ci(&samples, 2.0, 5);
        assert_eq!(a, b);
        let est = moment(&samples, 2.0);
        assert!(a.0 <= est && est <= a.1, "{a:?} vs {est}");
        let single = bootstrap_ci(&[0.25], 2.0, 5);
        assert_eq!(single, (0.25, 0.25));
    }

    #[test]
    fn coupled_paths_accepts_generated_paths() {
        let model = NoiseModel::<f64>::new(
            vec![
                NoiseMode {
                    lambda: 1.0,
                    kind: ModeKind::Identity,
                },
                NoiseMode {
                    lambda: 0.25,
                    kind: ModeKind::DampedIdentity,
                },
            ],
            1.0,
        )
        .unwrap();
        let fine = generate_paths(&model, 11, 0, 64, 1.0).unwrap();
        for factor in [1usize, 2, 8, 64] {
            let coarse = coupled_paths(&fine, factor).unwrap();
            assert_eq!(coarse.steps(), 64 / factor);
        }
    }

    #[test]
    fn sup_error_of_identical_lists_is_zero() {
        let mesh = build_structured_mesh::<f64>(4).unwrap();
        let f = interpolate(&mesh, sin_product).unwrap();
        let list = vec![(0usize, f.clone()), (2, f.clone()), (4, f.clone())];
        let sup = sup_error_over_checkpoints(&list, 0.25, &list, 0.25, 2.0).unwrap();
        assert_eq!(sup, 0.0);
    }

    #[test]
    fn sup_error_picks_the_single_discrepancy() {
        let mesh = build_structured_mesh::<f64>(4).unwrap();
        let z = FeFunction64::zero(mesh.clone());
        let c = FeFunction64::from_coeffs(mesh.clone(), vec![0.3; mesh.dof_count()]).unwrap();
        let coarse = vec![(0usize, z.clone()), (1, z.clone()), (2, z.clone())];
        let reference = vec![(0usize, z.clone()), (1, c.clone()), (2, z.clone())];
        let sup = sup_error_over_checkpoints(&coarse, 0.5, &reference, 0.5, 2.0).unwrap();
        let expected = lq_norm(&c, 2.0, &Quadrature::degree5()).unwrap();
        assert!((sup - expected).abs() <= 1e-15, "{sup} vs {expected}");
    }

    #[test]
    fn sup_error_prolongs_nested_meshes() {
        let coarse_mesh = build_structured_mesh::<f64>(2).unwrap();
        let fine_mesh = build_structured_mesh::<f64>(4).unwrap();
        let u = interpolate(&coarse_mesh, |x| x[0] * (1.0 - x[0]) * x[1] * x[2]).unwrap();
        let up = prolongate(&u, &fine_mesh).unwrap();
        let coarse = vec![(0usize, u.clone()), (1, u.clone())];
        let reference = vec![(0usize, up.clone()), (2, up.clone())];
        let sup = sup_error_over_checkpoints(&coarse, 0.5, &reference, 0.25, 2.0).unwrap();
        assert!(sup <= 1e-14, "{sup}");
    }

    #[test]
    fn sup_error_rejects_unmatched_grids() {
        let mesh = build_structured_mesh::<f64>(2).unwrap();
        let z = FeFunction64::zero(mesh.clone());
        let coarse = vec![(0usize, z.clone()), (1, z.clone())];
        let reference = vec![(0usize, z.clone()), (3, z.clone())];
        assert!(sup_error_over_checkpoints(&coarse, 0.5, &reference, 0.25, 2.0).is_err());
        assert!(sup_error_over_checkpoints(&coarse, 0.3, &reference, 0.25, 2.0).is_err());
    }
}
