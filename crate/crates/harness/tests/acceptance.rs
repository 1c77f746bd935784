//! Acceptance gate: one test per numbered criterion, each printing a single
//! `[PASS]`/`[FAIL]` line. Tolerances are pinned here, not in config files.
//!
//! The statistical studies (criteria 1, 3, 4, 5, 7) are `#[ignore]`d so the
//! default debug test run stays quick; the full gate is
//!
//! ```text
//! cargo test -p allencahn-harness --test acceptance --release -- \
//!     --include-ignored --nocapture --test-threads=1
//! ```

use std::f64::consts::PI;
use std::sync::Arc;

use allencahn_core::fem::{
    assemble_mass, assemble_stiffness, assemble_stiffness_full, cubic_jacobian, cubic_load,
    l2_project_with, lq_norm, m_norm, FeFunction, Quadrature,
};
use allencahn_core::linalg::SolverConfig;
use allencahn_core::mesh::{build_structured_mesh, prolongate, Mesh};
use allencahn_core::noise::{coarsen, generate_paths, ModeKind, NoiseMode, NoiseModel};
use allencahn_core::reference::smallest_eigenpair;
use allencahn_core::scheme::{SchemeConfig, Stepper};

use allencahn_harness::config::{ProbeFile, SpatialFile, TemporalFile};
use allencahn_harness::report::errors_csv_string;
use allencahn_harness::study::{run_probe, run_spatial_study, run_temporal_study};

const DET_SPATIAL_SLOPE: (f64, f64) = (1.8, 2.2);
const EIGEN_DECAY_TOL: f64 = 1e-8;
const TEMPORAL_SLOPE: (f64, f64) = (0.4, 0.6);
const FULL_SPATIAL_MIN_SLOPE: f64 = 1.7;
const PROBE_MAX_SPREAD: f64 = 1.5;
const SYMMETRY_TOL: f64 = 1e-14;
const ROW_SUM_TOL: f64 = 1e-13;
const PROJECTION_TOL: f64 = 1e-9;
const JACOBIAN_FD_TOL: f64 = 1e-5;
const NEWTON_BISECTION_TOL: f64 = 1e-10;
const PROLONGATION_TOL: f64 = 1e-12;

fn report(criterion: u32, ok: bool, detail: &str) {
    let tag = if ok { "[PASS]" } else { "[FAIL]" };
    println!("{tag} criterion {criterion}: {detail}");
    assert!(ok, "criterion {criterion}: {detail}");
}

fn sin_product(x: [f64; 3]) -> f64 {
    (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin()
}

/// Deterministic heat + reaction problem with the exact solution
/// e^{(1 - 3 pi^2) t} sin(pi x) sin(pi y) sin(pi z): L2 slope near 2.
#[test]
#[ignore = "release-gate study, ~1 min optimized"]
fn criterion_1_deterministic_spatial_order() {
    let cfg: SpatialFile = toml::from_str(
        r#"
        levels = [4, 8, 16]
        reference_n = 32
        t_horizon = 0.01
        steps = 1000
        checkpoint_stride = 50
        m_paths = 1
        p_list = [2.0]
        q_list = [2.0]
        reference = "exact-heat"
        [model]
        cubic = false
        [[model.modes]]
        kind = "identity"
        lambda = 0.0
        "#,
    )
    .unwrap();
    let rep = run_spatial_study(&cfg).unwrap();
    let slope = rep.slopes[0].slope;
    report(
        1,
        (DET_SPATIAL_SLOPE.0..=DET_SPATIAL_SLOPE.1).contains(&slope),
        &format!(
            "deterministic L2 spatial slope {slope:.4} in [{}, {}] ({:.0}s)",
            DET_SPATIAL_SLOPE.0, DET_SPATIAL_SLOPE.1, rep.runtime_seconds
        ),
    );
}

/// One implicit Euler step on a discrete eigenvector contracts by exactly
/// (1 + tau r) / (1 + tau mu_h).
#[test]
fn criterion_2_discrete_eigen_decay() {
    let n = 8;
    let tau = 1e-3;
    let mesh = build_structured_mesh::<f64>(n).unwrap();
    let mass = assemble_mass(&mesh).unwrap();
    let stiffness = assemble_stiffness(&mesh).unwrap();
    let (mu, evec) = smallest_eigenpair(&stiffness, &mass);

    let cfg = SchemeConfig::<f64> {
        t_horizon: tau,
        steps: 1,
        n,
        cubic_enabled: false,
        reaction_coeff: 1.0,
        q_list: vec![2.0],
        p_list: vec![2.0],
        solver: SolverConfig {
            cg_rel_tol: 1e-14,
            ..SolverConfig::default()
        },
        allow_tau_above_h2: false,
    };
    let silent = NoiseModel::new(
        vec![NoiseMode {
            lambda: 0.0,
            kind: ModeKind::Identity,
        }],
        1.0,
    )
    .unwrap();
    let stepper = Stepper::with_mesh(cfg, silent, mesh.clone()).unwrap();
    let y0 = FeFunction::from_coeffs(mesh, evec.clone()).unwrap();
    let (y1, _) = stepper.step(&y0, &[0.0]).unwrap();

    let factor = (1.0 + tau * 1.0) / (1.0 + tau * mu);
    let mut diff = y1.coeffs().to_vec();
    for (d, &e) in diff.iter_mut().zip(&evec) {
        *d -= factor * e;
    }
    let rel = m_norm(&mass, &diff) / m_norm(&mass, y0.coeffs());
    report(
        2,
        rel <= EIGEN_DECAY_TOL,
        &format!("eigen-decay factor (1+tau r)/(1+tau mu), mu_h={mu:.4}, rel err {rel:.2e} <= {EIGEN_DECAY_TOL:.0e}"),
    );
}

/// Linear multiplicative model against the exact transform solution on a
/// fixed mesh: strong temporal slope near 1/2.
#[test]
#[ignore = "release-gate study, ~10 s optimized"]
fn criterion_3_linear_pathwise_oracle() {
    let cfg: TemporalFile = toml::from_str(
        r#"
        n0 = 4
        levels = [1, 2, 3, 4]
        ref_level = 5
        t_horizon = 2e-4
        m_paths = 64
        master_seed = 1001
        p_list = [2.0]
        q_list = [2.0]
        reference = "exact-linear"
        [model]
        cubic = false
        "#,
    )
    .unwrap();
    let rep = run_temporal_study(&cfg).unwrap();
    let slope = rep.slopes[0].slope;
    report(
        3,
        (TEMPORAL_SLOPE.0..=TEMPORAL_SLOPE.1).contains(&slope),
        &format!(
            "linear oracle temporal slope {slope:.4} in [{}, {}] at M=64 ({:.0}s)",
            TEMPORAL_SLOPE.0, TEMPORAL_SLOPE.1, rep.runtime_seconds
        ),
    );
}

/// Full nonlinear spatial study: pathwise uniform errors against the n=32
/// coupled reference decay with slope at least 1.7 on the p = q diagonal.
#[test]
#[ignore = "release-gate study, ~30 min optimized single-threaded"]
fn criterion_4_full_spatial_study() {
    let cfg: SpatialFile = toml::from_str(
        r#"
        levels = [4, 8, 16]
        reference_n = 32
        t_horizon = 0.01
        steps = 100
        checkpoint_stride = 10
        m_paths = 64
        master_seed = 4001
        p_list = [2.0, 4.0, 16.0]
        q_list = [2.0, 4.0, 16.0]
        "#,
    )
    .unwrap();
    let rep = run_spatial_study(&cfg).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [2.0, 4.0, 16.0] {
        let fit = rep
            .slopes
            .iter()
            .find(|s| s.p == p && s.q == p)
            .expect("diagonal fit");
        ok &= fit.slope >= FULL_SPATIAL_MIN_SLOPE;
        parts.push(format!("p=q={p}: {:.3}", fit.slope));
    }
    ok &= !rep.warnings.iter().any(|w| w.contains("no monotone refinement"));
    report(
        4,
        ok,
        &format!(
            "full spatial slopes >= {FULL_SPATIAL_MIN_SLOPE} [{}] ({:.0}s)",
            parts.join(", "),
            rep.runtime_seconds
        ),
    );
}

/// Full nonlinear temporal study with h ~ tau^{1/2} coupling: slopes near
/// 1/2 on the p = q diagonal.
#[test]
#[ignore = "release-gate study, ~20 min optimized single-threaded"]
fn criterion_5_full_temporal_study() {
    let cfg: TemporalFile = toml::from_str(
        r#"
        n0 = 2
        levels = [1, 2, 3]
        ref_level = 5
        ref_n = 16
        t_horizon = 0.1
        m_paths = 64
        master_seed = 5001
        p_list = [2.0, 4.0]
        q_list = [2.0, 4.0]
        [model]
        [[model.modes]]
        kind = "identity"
        lambda = 4.0
        "#,
    )
    .unwrap();
    let rep = run_temporal_study(&cfg).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [2.0, 4.0] {
        let fit = rep
            .slopes
            .iter()
            .find(|s| s.p == p && s.q == p)
            .expect("diagonal fit");
        ok &= (TEMPORAL_SLOPE.0..=TEMPORAL_SLOPE.1).contains(&fit.slope);
        parts.push(format!("p=q={p}: {:.3}", fit.slope));
    }
    report(
        5,
        ok,
        &format!(
            "full temporal slopes in [{}, {}] [{}] ({:.0}s)",
            TEMPORAL_SLOPE.0,
            TEMPORAL_SLOPE.1,
            parts.join(", "),
            rep.runtime_seconds
        ),
    );
}

/// Ito isometry of the sampled increments: the lambda-weighted quadratic
/// variation over [0, T] has mean 1; its 99% CI must contain 1 at 10^4 paths.
#[test]
fn criterion_6_ito_isometry() {
    let modes: Vec<NoiseMode<f64>> = [1.0, 0.5, 0.25]
        .into_iter()
        .map(|lambda| NoiseMode {
            lambda,
            kind: ModeKind::Identity,
        })
        .collect();
    let lambdas: Vec<f64> = modes.iter().map(|m| m.lambda).collect();
    let total: f64 = lambdas.iter().sum();
    let model = NoiseModel::new(modes, 1.0).unwrap();
    let (m_paths, steps, t) = (10_000usize, 16usize, 1.0f64);

    let mut samples = Vec::with_capacity(m_paths);
    for path in 0..m_paths {
        let paths = generate_paths(&model, 60601, path as u64, steps, t).unwrap();
        let mut qv = 0.0;
        for (k, &lambda) in lambdas.iter().enumerate() {
            let incs = paths.mode_increments(k);
            qv += lambda * incs.iter().map(|d| d * d).sum::<f64>();
        }
        samples.push(qv / (t * total));
    }
    let mean = samples.iter().sum::<f64>() / m_paths as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m_paths - 1) as f64;
    let half = 2.5758 * (var / m_paths as f64).sqrt();
    let (lo, hi) = (mean - half, mean + half);
    report(
        6,
        lo <= 1.0 && 1.0 <= hi,
        &format!("Ito isometry ratio 99% CI [{lo:.4}, {hi:.4}] contains 1 at {m_paths} paths"),
    );
}

/// Stability of the discrete stochastic convolution: the lhs/rhs ratio stays
/// within a factor 1.5 across J for a constant single-mode g.
#[test]
#[ignore = "release-gate study, ~1 min optimized"]
fn criterion_7_regularity_probe() {
    let cfg: ProbeFile = toml::from_str(
        r#"
        n = 8
        j_list = [8, 16, 32, 64]
        p = 4.0
        q = 4.0
        m_paths = 256
        t_horizon = 0.1
        master_seed = 7001
        [[modes]]
        lambda = 1.0
        integrand = "ones"
        "#,
    )
    .unwrap();
    let (rep, runtime) = run_probe(&cfg).unwrap();
    assert!(rep.rows.iter().all(|r| !r.degenerate));
    let spread = rep.ratio_spread().expect("finite ratios");
    let ratios: Vec<String> = rep
        .rows
        .iter()
        .map(|r| format!("J={}: {:.3}", r.steps, r.ratio))
        .collect();
    report(
        7,
        spread <= PROBE_MAX_SPREAD,
        &format!(
            "probe ratio spread {spread:.3} <= {PROBE_MAX_SPREAD} over [{}] ({runtime:.0}s)",
            ratios.join(", ")
        ),
    );
}

fn tet_volume(p: [[f64; 3]; 4]) -> f64 {
    let e = |a: usize, b: usize, i: usize| p[b][i] - p[a][i];
    let det = e(0, 1, 0) * (e(0, 2, 1) * e(0, 3, 2) - e(0, 2, 2) * e(0, 3, 1))
        - e(0, 1, 1) * (e(0, 2, 0) * e(0, 3, 2) - e(0, 2, 2) * e(0, 3, 0))
        + e(0, 1, 2) * (e(0, 2, 0) * e(0, 3, 1) - e(0, 2, 1) * e(0, 3, 0));
    det.abs() / 6.0
}

/// Structural invariants with pinned tolerances, bundled as one criterion.
#[test]
fn criterion_8_invariant_suite() {
    let mut failures: Vec<String> = Vec::new();
    let mut checked = 0usize;
    let mut check = |cond: bool, what: &str| {
        checked += 1;
        if !cond {
            failures.push(what.to_string());
        }
    };

    // Mesh counts and volumes, exactly.
    let n = 5u32;
    let mesh = build_structured_mesh::<f64>(n).unwrap();
    check(mesh.tet_count() == 6 * (n as usize).pow(3), "tet count 6 n^3");
    check(
        mesh.vertex_count() == ((n + 1) as usize).pow(3),
        "vertex count (n+1)^3",
    );
    check(
        mesh.dof_count() == ((n - 1) as usize).pow(3),
        "interior dof count (n-1)^3",
    );
    let (mut vol, mut carry) = (0.0f64, 0.0f64);
    for t in mesh.tets() {
        let v = tet_volume([
            mesh.vertex(t[0]),
            mesh.vertex(t[1]),
            mesh.vertex(t[2]),
            mesh.vertex(t[3]),
        ]) - carry;
        let s = vol + v;
        carry = (s - vol) - v;
        vol = s;
    }
    check((vol - 1.0).abs() <= 1e-14, "tet volumes sum to 1");

    // Assembled matrix symmetry.
    let mass = assemble_mass(&mesh).unwrap();
    let stiffness = assemble_stiffness(&mesh).unwrap();
    check(mass.symmetry_defect() <= SYMMETRY_TOL, "mass symmetry");
    check(stiffness.symmetry_defect() <= SYMMETRY_TOL, "stiffness symmetry");

    // Constants lie in the stiffness kernel (free assembly, all vertices).
    let full = assemble_stiffness_full(&mesh).unwrap();
    let ones = vec![1.0; full.dim()];
    let worst = full
        .mul_vec_alloc(&ones)
        .into_iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    check(worst <= ROW_SUM_TOL, "stiffness rows sum to zero");

    // P_h idempotence at tight cg tolerance.
    let tight = SolverConfig {
        cg_rel_tol: 1e-14,
        ..SolverConfig::<f64>::default()
    };
    let quad = Quadrature::degree2();
    let m4 = build_structured_mesh::<f64>(4).unwrap();
    let mass4 = assemble_mass(&m4).unwrap();
    let u = l2_project_with(&mass4, &m4, sin_product, &quad, &tight).unwrap();
    let pu = l2_project_with(&mass4, &m4, |x| u.eval(x), &quad, &tight).unwrap();
    let drift = lq_norm(&pu.sub(&u), 2.0, &Quadrature::degree5()).unwrap();
    check(drift <= PROJECTION_TOL, "projection idempotence");

    // Cubic Jacobian against central finite differences, relative.
    let coeffs: Vec<f64> = (0..m4.dof_count())
        .map(|i| (0.3 + 0.7 * ((i * 2654435761) % 97) as f64 / 97.0) * if i % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let dir: Vec<f64> = (0..m4.dof_count())
        .map(|i| 1.0 - 2.0 * ((i * 40503) % 89) as f64 / 89.0)
        .collect();
    let uf = FeFunction::from_coeffs(m4.clone(), coeffs).unwrap();
    let jw = cubic_jacobian(&uf, &quad).unwrap().mul_vec_alloc(&dir);
    let eps = 1e-5;
    let shift = |s: f64| {
        let mut v = uf.clone();
        for (c, d) in v.coeffs_mut().iter_mut().zip(&dir) {
            *c += s * d;
        }
        v
    };
    let bp = cubic_load(&shift(eps), &quad).unwrap();
    let bm = cubic_load(&shift(-eps), &quad).unwrap();
    let scale = jw.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let fd_worst = (0..jw.len())
        .map(|i| (jw[i] - (bp[i] - bm[i]) / (2.0 * eps)).abs())
        .fold(0.0f64, f64::max);
    check(fd_worst <= JACOBIAN_FD_TOL * scale.max(1.0), "cubic jacobian vs fd");

    // Newton against bisection on the single-dof problem.
    let m2 = build_structured_mesh::<f64>(2).unwrap();
    let mass2 = assemble_mass(&m2).unwrap();
    let stiff2 = assemble_stiffness(&m2).unwrap();
    let (m00, a00) = (mass2.value_at(0, 0), stiff2.value_at(0, 0));
    let k = cubic_load(&FeFunction::from_coeffs(m2.clone(), vec![1.0]).unwrap(), &quad).unwrap()[0];
    let tau = 0.5;
    let cfg2 = SchemeConfig::<f64> {
        t_horizon: tau,
        steps: 1,
        n: 2,
        cubic_enabled: true,
        reaction_coeff: 1.0,
        q_list: vec![2.0],
        p_list: vec![2.0],
        solver: SolverConfig {
            cg_rel_tol: 1e-14,
            newton_tol: 1e-13,
            ..SolverConfig::default()
        },
        allow_tau_above_h2: false,
    };
    let silent = NoiseModel::new(
        vec![NoiseMode {
            lambda: 0.0,
            kind: ModeKind::Identity,
        }],
        1.0,
    )
    .unwrap();
    let stepper2 = Stepper::with_mesh(cfg2, silent, m2.clone()).unwrap();
    let y0 = FeFunction::from_coeffs(m2, vec![0.8]).unwrap();
    let newton_y = stepper2.step(&y0, &[0.0]).unwrap().0.coeffs()[0];
    let rhs = m00 * (1.0 + tau * 1.0) * 0.8;
    let g = |z: f64| (m00 + tau * a00) * z + tau * k * z * z * z - rhs;
    let (mut lo, mut hi) = (0.0f64, 2.0f64);
    assert!(g(lo) < 0.0 && g(hi) > 0.0, "bisection bracket");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let bisect_y = 0.5 * (lo + hi);
    check(
        (newton_y - bisect_y).abs() <= NEWTON_BISECTION_TOL,
        "newton vs bisection",
    );

    // Coarsening composes bit-exactly over dyadic factors.
    let model: NoiseModel<f64> = NoiseModel::new(
        vec![
            NoiseMode {
                lambda: 1.0,
                kind: ModeKind::Identity,
            },
            NoiseMode {
                lambda: 0.5,
                kind: ModeKind::Identity,
            },
        ],
        1.0,
    )
    .unwrap();
    let fine = generate_paths(&model, 808, 3, 16, 1.0).unwrap();
    let two_step = coarsen(&coarsen(&fine, 2).unwrap(), 2).unwrap();
    let one_step = coarsen(&fine, 4).unwrap();
    let mut bit_exact = true;
    for mode in 0..2 {
        bit_exact &= two_step
            .mode_increments(mode)
            .iter()
            .zip(one_step.mode_increments(mode))
            .all(|(a, b)| a.to_bits() == b.to_bits());
    }
    check(bit_exact, "coarsening dyadic composition bit-exact");

    // Prolongation preserves the function: norms agree across meshes and a
    // two-stage refinement equals one jump.
    let coarse = build_structured_mesh::<f64>(4).unwrap();
    let fine16: Arc<Mesh<f64>> = build_structured_mesh(16).unwrap();
    let mid8: Arc<Mesh<f64>> = build_structured_mesh(8).unwrap();
    let coeffs4: Vec<f64> = (0..coarse.dof_count())
        .map(|i| ((i * 31) % 13) as f64 / 13.0 - 0.5)
        .collect();
    let uc = FeFunction::from_coeffs(coarse, coeffs4).unwrap();
    let q5 = Quadrature::degree5();
    let direct = prolongate(&uc, &fine16).unwrap();
    let staged = prolongate(&prolongate(&uc, &mid8).unwrap(), &fine16).unwrap();
    let norm_gap =
        (lq_norm(&uc, 2.0, &q5).unwrap() - lq_norm(&direct, 2.0, &q5).unwrap()).abs();
    check(norm_gap <= PROLONGATION_TOL, "prolongation preserves L2 norm");
    let stage_gap = lq_norm(&direct.sub(&staged), 2.0, &q5).unwrap();
    check(stage_gap <= PROLONGATION_TOL, "two-stage prolongation equals one jump");

    // Byte-level determinism of the study pipeline.
    let study: SpatialFile = toml::from_str(
        r#"
        levels = [2, 4]
        reference_n = 8
        t_horizon = 0.02
        steps = 2
        m_paths = 2
        p_list = [2.0]
        q_list = [2.0]
        "#,
    )
    .unwrap();
    let csv_a = errors_csv_string(&run_spatial_study(&study).unwrap());
    let csv_b = errors_csv_string(&run_spatial_study(&study).unwrap());
    check(csv_a == csv_b, "study determinism byte-level");

    let ok = failures.is_empty();
    report(
        8,
        ok,
        &format!(
            "{checked} invariants (counts/volumes, symmetry, kernel, projection, jacobian, newton, coarsening, prolongation, determinism){}",
            if ok { String::new() } else { format!("; failed: {}", failures.join("; ")) }
        ),
    );
}
