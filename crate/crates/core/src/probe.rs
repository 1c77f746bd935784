//! Discrete stochastic convolution and the empirical stability probe: does
//! the p-th moment of max_j ||Z_j||_{L^q} stay bounded by the step-process
//! norm of the integrand, uniformly in the step count?
//!
//! No constant is asserted, only boundedness of the ratio across coupled
//! refinements, with Monte-Carlo confidence intervals.

use crate::error::{Error, Result};
use crate::fem::{
    assemble_mass, assemble_stiffness, checked_volume, lq_norm, tet_coords, FeFunction, QPow,
    Quadrature,
};
use crate::linalg::{cg_solve, SolverConfig, SparseMatrix};
use crate::mesh::build_structured_mesh;
use crate::noise::{coarsen, generate_paths, BrownianPaths, NoiseModel};
use crate::scalar::Real;

/// Parameters of one stability probe run.
#[derive(Debug, Clone)]
pub struct ProbeConfig<T: Real> {
    /// Moment exponent, strictly above 2.
    pub p: T,
    /// Spatial exponent, at least 2.
    pub q: T,
    /// Step counts to compare; each must divide the largest by a power of
    /// two so all resolutions ride the same coupled paths.
    pub j_list: Vec<usize>,
    pub n: u32,
    pub m_paths: usize,
    pub t_horizon: T,
    pub master_seed: u64,
    pub solver: SolverConfig<T>,
}

impl<T: Real> ProbeConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > T::of(2.0)) || !self.p.is_finite() {
            return Err(Error::ExponentRange(self.p.as_f64()));
        }
        if !(self.q >= T::of(2.0)) || !self.q.is_finite() {
            return Err(Error::ExponentRange(self.q.as_f64()));
        }
        if self.j_list.is_empty() {
            return Err(Error::InvalidConfig("probe needs at least one step count".into()));
        }
        let finest = *self.j_list.iter().max().expect("nonempty");
        for &j in &self.j_list {
            if j == 0 || finest % j != 0 || !(finest / j).is_power_of_two() {
                return Err(Error::InvalidConfig(format!(
                    "step count {j} does not divide the finest {finest} by a power of two"
                )));
            }
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("mesh needs at least one subdivision".into()));
        }
        if self.m_paths == 0 {
            return Err(Error::InvalidConfig("need at least one path".into()));
        }
        if !(self.t_horizon > T::zero()) || !self.t_horizon.is_finite() {
            return Err(Error::InvalidConfig("horizon must be positive and finite".into()));
        }
        self.solver.validate()
    }

    pub fn finest_steps(&self) -> usize {
        self.j_list.iter().copied().max().unwrap_or(0)
    }
}

/// One row of the probe report, for a single step count.
#[derive(Debug, Clone)]
pub struct ProbeRow {
    pub steps: usize,
    /// (E max_j ||Z_j||_q^p)^{1/p}, Monte-Carlo estimate.
    pub lhs: f64,
    /// (sum_k tau ||g(t_k)||_gamma^p)^{1/p}, exact for deterministic g.
    pub rhs: f64,
    pub ratio: f64,
    /// 99% confidence interval for the ratio.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Set when the right side vanishes and the ratio is meaningless.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub n: u32,
    pub p: f64,
    pub q: f64,
    pub m_paths: usize,
    pub rows: Vec<ProbeRow>,
}

impl ProbeReport {
    /// Largest over smallest finite ratio; the boundedness statistic.
    pub fn ratio_spread(&self) -> Option<f64> {
        let finite: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| !r.degenerate && r.ratio.is_finite())
            .map(|r| r.ratio)
            .collect();
        if finite.is_empty() {
            return None;
        }
        let max = finite.iter().fold(f64::MIN, |a, &b| a.max(b));
        let min = finite.iter().fold(f64::MAX, |a, &b| a.min(b));
        Some(max / min)
    }
}

/// L^q norm of the lambda-weighted square function of per-mode fields,
/// sqrt(sum_n lambda_n g_n(x)^2).
pub fn mode_square_norm<T: Real>(
    fields: &[(T, &FeFunction<T>)],
    q: T,
    quad: &Quadrature<T>,
) -> Result<T> {
    let pow = QPow::new(q)?;
    let Some((_, first)) = fields.first() else {
        return Ok(T::zero());
    };
    let mesh = first.mesh();
    let mut acc = T::zero();
    for (t, tet) in mesh.tets().iter().enumerate() {
        let p = tet_coords(mesh, tet);
        let vol = checked_volume(&p, t)?;
        let per_field: Vec<[T; 4]> = fields
            .iter()
            .map(|(_, f)| {
                [
                    f.vertex_value(tet[0]),
                    f.vertex_value(tet[1]),
                    f.vertex_value(tet[2]),
                    f.vertex_value(tet[3]),
                ]
            })
            .collect();
        for (lam, &w) in quad.points().iter().zip(quad.weights()) {
            let mut sq = T::zero();
            for ((lambda, _), vals) in fields.iter().zip(&per_field) {
                let v = lam[0] * vals[0] + lam[1] * vals[1] + lam[2] * vals[2] + lam[3] * vals[3];
                sq += *lambda * v * v;
            }
            acc += w * vol * pow.abs_pow(sq.sqrt());
        }
    }
    Ok(pow.root(acc))
}

/// Runs the resolvent recursion Z_{j+1} = (I - tau Dh)^{-1} (Z_j +
/// sum_n sqrt(lambda_n) g_n(t_j) dbeta_{n,j}) and returns Z_0..Z_J.
/// `system` must be M + tau A for the tau of `paths`.
pub fn discrete_convolution<T: Real>(
    g_modes: &[Vec<FeFunction<T>>],
    lambdas: &[T],
    paths: &BrownianPaths<T>,
    mass: &SparseMatrix<T>,
    system: &SparseMatrix<T>,
    solver: &SolverConfig<T>,
) -> Result<Vec<FeFunction<T>>> {
    let steps = paths.steps();
    if g_modes.len() != paths.mode_count() || g_modes.len() != lambdas.len() {
        return Err(Error::DimensionMismatch {
            expected: paths.mode_count(),
            got: g_modes.len(),
        });
    }
    for fields in g_modes {
        if fields.len() != steps {
            return Err(Error::PathLengthMismatch {
                expected: steps,
                got: fields.len(),
            });
        }
    }
    let mesh = g_modes
        .first()
        .and_then(|m| m.first())
        .map(|f| f.mesh().clone())
        .ok_or_else(|| Error::InvalidConfig("probe needs at least one mode".into()))?;
    let sqrt_lambda: Vec<T> = lambdas.iter().map(|l| l.sqrt()).collect();

    let mut out = Vec::with_capacity(steps + 1);
    let mut z = FeFunction::zero(mesh.clone());
    out.push(z.clone());
    for j in 0..steps {
        let mut rhs_fe = z.clone();
        for (n, fields) in g_modes.iter().enumerate() {
            let c = sqrt_lambda[n] * paths.mode_increments(n)[j];
            rhs_fe.axpy(c, &fields[j]);
        }
        let b = mass.mul_vec_alloc(rhs_fe.coeffs());
        let coeffs = cg_solve(system, &b, solver)?;
        z = FeFunction::from_raw(mesh.clone(), coeffs);
        out.push(z.clone());
    }
    Ok(out)
}

/// Monte-Carlo probe of the stability estimate over every step count in the
/// config, all resolutions coupled through the same finest paths.
pub fn stability_ratio<T, G>(
    cfg: &ProbeConfig<T>,
    model: &NoiseModel<T>,
    g: G,
) -> Result<ProbeReport>
where
    T: Real,
    G: Fn(usize, T) -> Result<FeFunction<T>>,
{
    cfg.validate()?;
    if model.mode_count() == 0 {
        return Err(Error::InvalidConfig("probe needs at least one mode".into()));
    }
    let mesh = build_structured_mesh::<T>(cfg.n)?;
    let mass = assemble_mass(&mesh)?;
    let stiffness = assemble_stiffness(&mesh)?;
    let norm_quad = Quadrature::degree5();
    let finest = cfg.finest_steps();
    let lambdas: Vec<T> = model.modes().iter().map(|m| m.lambda).collect();
    let p_f64 = cfg.p.as_f64();

    let mut j_sorted = cfg.j_list.clone();
    j_sorted.sort_unstable();
    j_sorted.dedup();

    let mut rows = Vec::with_capacity(j_sorted.len());
    for &steps in &j_sorted {
        let tau = cfg.t_horizon / T::of_usize(steps);
        let system =
            SparseMatrix::linear_combination(&[(T::one(), &mass), (tau, &stiffness)])?;

        let mut g_modes: Vec<Vec<FeFunction<T>>> = Vec::with_capacity(model.mode_count());
        for mode in 0..model.mode_count() {
            let mut fields = Vec::with_capacity(steps);
            for k in 0..steps {
                let f = g(mode, tau * T::of_usize(k))?;
                if f.mesh().n() != cfg.n {
                    return Err(Error::InvalidConfig(
                        "probe integrand lives on the wrong mesh".into(),
                    ));
                }
                fields.push(f);
            }
            g_modes.push(fields);
        }

        let mut rhs_acc = 0.0f64;
        for k in 0..steps {
            let fields: Vec<(T, &FeFunction<T>)> = lambdas
                .iter()
                .zip(&g_modes)
                .map(|(&l, m)| (l, &m[k]))
                .collect();
            let gamma = mode_square_norm(&fields, cfg.q, &norm_quad)?.as_f64();
            rhs_acc += tau.as_f64() * gamma.powf(p_f64);
        }
        let rhs = rhs_acc.powf(1.0 / p_f64);

        let mut samples = Vec::with_capacity(cfg.m_paths);
        for path in 0..cfg.m_paths {
            let fine = generate_paths(model, cfg.master_seed, path as u64, finest, cfg.t_horizon)?;
            let paths = coarsen(&fine, finest / steps)?;
            let zs = discrete_convolution(&g_modes, &lambdas, &paths, &mass, &system, &cfg.solver)?;
            let mut max_norm = 0.0f64;
            for z in &zs[1..] {
                let norm = lq_norm(z, cfg.q, &norm_quad)?.as_f64();
                max_norm = max_norm.max(norm);
            }
            samples.push(max_norm.powf(p_f64));
        }
        let m = cfg.m_paths as f64;
        let mean = samples.iter().sum::<f64>() / m;
        let var = if cfg.m_paths > 1 {
            samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0)
        } else {
            0.0
        };
        let se = (var / m).sqrt();
        let lhs = mean.powf(1.0 / p_f64);
        let lo = (mean - 2.5758 * se).max(0.0).powf(1.0 / p_f64);
        let hi = (mean + 2.5758 * se).powf(1.0 / p_f64);
        let degenerate = rhs == 0.0;
        rows.push(ProbeRow {
            steps,
            lhs,
            rhs,
            ratio: lhs / rhs,
            ci_low: lo / rhs,
            ci_high: hi / rhs,
            degenerate,
        });
    }
    Ok(ProbeReport {
        n: cfg.n,
        p: p_f64,
        q: cfg.q.as_f64(),
        m_paths: cfg.m_paths,
        rows,
    })
}
