//! Cylindrical Brownian noise: coupled increment generation across dyadic
//! time resolutions and the realized diffusion operator
//! F(u) = sum_n sqrt(lambda_n) h_n (x) f_n(u).
//!
//! Increments are drawn with a counter-based scheme: every (master seed,
//! path index, mode) triple keys its own ChaCha12 stream, and each step
//! consumes a fixed number of raw words, so the increment at step j is a
//! pure function of (seed, path, mode, j) no matter how paths are scheduled
//! across threads. Draws happen in f64 and are rounded into the working
//! scalar type, so f32 and f64 runs see the same underlying sample paths.

use std::sync::Arc;

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::fem::{
    checked_volume, gather, lq_norm, tet_coords, FeFunction, QPow, Quadrature,
};
use crate::linalg::{cg_solve, SolverConfig};
use crate::mesh::Mesh;
use crate::scalar::Real;

/// Pointwise mode shape f_n(y). The built-ins act through the solution
/// value only; all vanish at y = 0, which keeps F(u) compatible with the
/// homogeneous Dirichlet boundary.
#[derive(Debug, Clone)]
pub enum ModeKind<T> {
    /// f(y) = y, the single-mode experiment model.
    Identity,
    /// f(y) = y / (1 + y^2), bounded with Lipschitz constant 1.
    DampedIdentity,
    /// Piecewise-linear table (y_k, f_k), constant beyond the table ends.
    Tabulated { ys: Vec<T>, vals: Vec<T> },
}

impl<T: Real> ModeKind<T> {
    pub fn eval(&self, y: T) -> T {
        match self {
            ModeKind::Identity => y,
            ModeKind::DampedIdentity => y / (T::one() + y * y),
            ModeKind::Tabulated { ys, vals } => {
                if y <= ys[0] {
                    return vals[0];
                }
                if y >= ys[ys.len() - 1] {
                    return vals[vals.len() - 1];
                }
                let k = match ys.binary_search_by(|v| v.partial_cmp(&y).unwrap()) {
                    Ok(k) => return vals[k],
                    Err(k) => k,
                };
                let t = (y - ys[k - 1]) / (ys[k] - ys[k - 1]);
                vals[k - 1] + t * (vals[k] - vals[k - 1])
            }
        }
    }
}

/// One noise mode: intensity lambda_n and shape f_n.
#[derive(Debug, Clone)]
pub struct NoiseMode<T> {
    pub lambda: T,
    pub kind: ModeKind<T>,
}

/// Truncated diffusion coefficient: finitely many modes plus the Lipschitz
/// constant C_F carried as metadata.
#[derive(Debug, Clone)]
pub struct NoiseModel<T> {
    modes: Vec<NoiseMode<T>>,
    lipschitz_bound: T,
}

impl<T: Real> NoiseModel<T> {
    pub fn new(modes: Vec<NoiseMode<T>>, lipschitz_bound: T) -> Result<Self> {
        if !(lipschitz_bound > T::zero()) || !lipschitz_bound.is_finite() {
            return Err(Error::InvalidConfig(
                "lipschitz bound must be positive and finite".into(),
            ));
        }
        for (i, mode) in modes.iter().enumerate() {
            if !(mode.lambda >= T::zero()) || !mode.lambda.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "mode {i}: lambda must be nonnegative and finite"
                )));
            }
            if let ModeKind::Tabulated { ys, vals } = &mode.kind {
                if ys.len() < 2 || ys.len() != vals.len() {
                    return Err(Error::InvalidConfig(format!(
                        "mode {i}: table needs at least two matching (y, f) pairs"
                    )));
                }
                if ys.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::InvalidConfig(format!(
                        "mode {i}: table abscissae must be strictly increasing"
                    )));
                }
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidConfig(format!(
                        "mode {i}: table values must be finite"
                    )));
                }
                if mode.kind.eval(T::zero()) != T::zero() {
                    return Err(Error::InvalidConfig(format!(
                        "mode {i}: f(0) must vanish to respect the boundary condition"
                    )));
                }
                let steep = ys
                    .windows(2)
                    .zip(vals.windows(2))
                    .map(|(y, v)| ((v[1] - v[0]) / (y[1] - y[0])).abs())
                    .fold(T::zero(), |m, s| if s > m { s } else { m });
                if steep > lipschitz_bound * T::of(1.0 + 1e-12) {
                    return Err(Error::InvalidConfig(format!(
                        "mode {i}: table slope {} exceeds the declared Lipschitz bound",
                        steep.as_f64()
                    )));
                }
            }
        }
        Ok(Self {
            modes,
            lipschitz_bound,
        })
    }

    /// The experiment model: one mode, f(y) = y, lambda = 1.
    pub fn single_mode_identity() -> Self {
        Self {
            modes: vec![NoiseMode {
                lambda: T::one(),
                kind: ModeKind::Identity,
            }],
            lipschitz_bound: T::one(),
        }
    }

    pub fn modes(&self) -> &[NoiseMode<T>] {
        &self.modes
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn lipschitz_bound(&self) -> T {
        self.lipschitz_bound
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 256-bit ChaCha key derived from the stream identity.
fn stream_key(master_seed: u64, path_index: u64, mode: u64) -> [u8; 32] {
    let mut state = master_seed;
    let a = splitmix64(&mut state);
    state ^= path_index.wrapping_mul(0xA24B_AED4_963E_E407);
    let b = splitmix64(&mut state);
    state ^= mode.wrapping_mul(0x9FB2_1C65_1E98_DF25);
    let c = splitmix64(&mut state);
    let d = splitmix64(&mut state);
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([a, b, c, d]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    key
}

/// One standard normal per two raw words (fixed consumption Box-Muller).
fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    let x = rng.next_u64();
    let y = rng.next_u64();
    let u1 = ((x >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0);
    let u2 = (y >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Brownian increments for one sample path, all modes, at one resolution.
/// Starts at the finest grid; [`coarsen`] produces exactly coupled coarser
/// versions of the same path.
#[derive(Debug, Clone)]
pub struct BrownianPaths<T> {
    master_seed: u64,
    path_index: u64,
    finest_j: usize,
    t_horizon: T,
    tau: T,
    /// increments[mode][step]
    increments: Vec<Vec<T>>,
}

impl<T: Real> BrownianPaths<T> {
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// Steps at the finest resolution this path was generated with.
    pub fn finest_steps(&self) -> usize {
        self.finest_j
    }

    /// Steps at the current (possibly coarsened) resolution.
    pub fn steps(&self) -> usize {
        self.increments.first().map_or(0, Vec::len)
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn t_horizon(&self) -> T {
        self.t_horizon
    }

    pub fn mode_count(&self) -> usize {
        self.increments.len()
    }

    pub fn mode_increments(&self, mode: usize) -> &[T] {
        &self.increments[mode]
    }

    /// All per-mode increments for step j.
    pub fn step_increments(&self, j: usize) -> Vec<T> {
        self.increments.iter().map(|m| m[j]).collect()
    }

    #[cfg(test)]
    pub(crate) fn with_increment_replaced(&self, mode: usize, j: usize, value: T) -> Self {
        let mut out = self.clone();
        out.increments[mode][j] = value;
        out
    }
}

/// Draws i.i.d. N(0, T/finest_j) increments for every mode of the model.
pub fn generate_paths<T: Real>(
    model: &NoiseModel<T>,
    master_seed: u64,
    path_index: u64,
    finest_j: usize,
    t_horizon: T,
) -> Result<BrownianPaths<T>> {
    if finest_j == 0 {
        return Err(Error::InvalidConfig("finest_j must be at least 1".into()));
    }
    if !(t_horizon > T::zero()) || !t_horizon.is_finite() {
        return Err(Error::InvalidConfig(
            "time horizon must be positive and finite".into(),
        ));
    }
    let tau = t_horizon / T::of_usize(finest_j);
    let sqrt_tau = tau.as_f64().sqrt();
    let mut increments = Vec::with_capacity(model.mode_count());
    for mode in 0..model.mode_count() {
        let mut rng = ChaCha12Rng::from_seed(stream_key(master_seed, path_index, mode as u64));
        let draws = (0..finest_j)
            .map(|_| T::of(standard_normal(&mut rng) * sqrt_tau))
            .collect();
        increments.push(draws);
    }
    Ok(BrownianPaths {
        master_seed,
        path_index,
        finest_j,
        t_horizon,
        tau,
        increments,
    })
}

/// Pairwise tree sum over a power-of-two block. Summing this way makes
/// repeated coarsening associative to the bit: coarsen by 2 twice performs
/// the same additions as coarsen by 4.
fn block_sum<T: Real>(block: &[T]) -> T {
    match block.len() {
        1 => block[0],
        len => {
            let half = len / 2;
            block_sum(&block[..half]) + block_sum(&block[half..])
        }
    }
}

/// Sums consecutive blocks of increments; `factor` must be a power of two
/// dividing the current step count.
pub fn coarsen<T: Real>(paths: &BrownianPaths<T>, factor: usize) -> Result<BrownianPaths<T>> {
    let steps = paths.steps();
    if factor == 0 || !factor.is_power_of_two() || steps % factor != 0 {
        return Err(Error::BadCoarsenFactor { factor, steps });
    }
    if factor == 1 {
        return Ok(paths.clone());
    }
    let coarse_steps = steps / factor;
    let increments = paths
        .increments
        .iter()
        .map(|fine| {
            (0..coarse_steps)
                .map(|j| block_sum(&fine[j * factor..(j + 1) * factor]))
                .collect()
        })
        .collect();
    Ok(BrownianPaths {
        master_seed: paths.master_seed,
        path_index: paths.path_index,
        finest_j: paths.finest_j,
        t_horizon: paths.t_horizon,
        tau: paths.tau * T::of_usize(factor),
        increments,
    })
}

/// Load vector of the noise term: b_i = sum_n sqrt(lambda_n) dbeta_n
/// * integral f_n(u) phi_i. The scheme consumes this directly; dividing by
/// the mass matrix yields the projected increment.
pub fn noise_load<T: Real>(
    model: &NoiseModel<T>,
    u: &FeFunction<T>,
    dbeta: &[T],
    quad: &Quadrature<T>,
) -> Result<Vec<T>> {
    if dbeta.len() != model.mode_count() {
        return Err(Error::DimensionMismatch {
            expected: model.mode_count(),
            got: dbeta.len(),
        });
    }
    let mesh = u.mesh();
    let weights: Vec<(T, &ModeKind<T>)> = model
        .modes
        .iter()
        .zip(dbeta)
        .map(|(m, &db)| (m.lambda.sqrt() * db, &m.kind))
        .collect();
    let mut b = vec![T::zero(); mesh.dof_count()];
    for (t, tet) in mesh.tets().iter().enumerate() {
        let p = tet_coords(mesh, tet);
        let vol = checked_volume(&p, t)?;
        let vals = gather(u, tet);
        for (lam, &w) in quad.points().iter().zip(quad.weights()) {
            let y = lam[0] * vals[0] + lam[1] * vals[1] + lam[2] * vals[2] + lam[3] * vals[3];
            let mut s = T::zero();
            for (c, kind) in &weights {
                s += *c * kind.eval(y);
            }
            let sv = s * w * vol;
            for (a, &vtx) in tet.iter().enumerate() {
                if let Some(d) = mesh.dof_of_vertex(vtx) {
                    b[d] += sv * lam[a];
                }
            }
        }
    }
    Ok(b)
}

/// P_h( sum_n sqrt(lambda_n) f_n(u) dbeta_n ): one mass solve on the noise
/// load.
pub fn diffusion_increment<T: Real>(
    model: &NoiseModel<T>,
    u: &FeFunction<T>,
    dbeta: &[T],
    quad: &Quadrature<T>,
    mass: &crate::linalg::SparseMatrix<T>,
    solver: &SolverConfig<T>,
) -> Result<FeFunction<T>> {
    let b = noise_load(model, u, dbeta, quad)?;
    let coeffs = cg_solve(mass, &b, solver)?;
    Ok(FeFunction::from_raw(u.mesh().clone(), coeffs))
}

/// L^q norm of the mode square function x -> sqrt(sum_n lambda_n f_n(u)^2),
/// the computable stand-in for the gamma-radonifying norm of F(u).
pub fn gamma_norm<T: Real>(
    model: &NoiseModel<T>,
    u: &FeFunction<T>,
    q: T,
    quad: &Quadrature<T>,
) -> Result<T> {
    let pow = QPow::new(q)?;
    let mesh = u.mesh();
    let mut acc = T::zero();
    for (t, tet) in mesh.tets().iter().enumerate() {
        let p = tet_coords(mesh, tet);
        let vol = checked_volume(&p, t)?;
        let vals = gather(u, tet);
        for (lam, &w) in quad.points().iter().zip(quad.weights()) {
            let y = lam[0] * vals[0] + lam[1] * vals[1] + lam[2] * vals[2] + lam[3] * vals[3];
            let mut sq = T::zero();
            for mode in &model.modes {
                let f = mode.kind.eval(y);
                sq += mode.lambda * f * f;
            }
            acc += w * vol * pow.abs_pow(sq.sqrt());
        }
    }
    Ok(pow.root(acc))
}

/// Deterministic step process t_j -> g(t_j), the integrand of the discrete
/// stochastic integral sum_j g(t_j) (beta(t_{j+1}) - beta(t_j)).
#[derive(Debug, Clone)]
pub struct StepProcess<T: Real> {
    values: Vec<FeFunction<T>>,
    tau: T,
}

impl<T: Real> StepProcess<T> {
    pub fn new(values: Vec<FeFunction<T>>, tau: T) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("step process needs at least one value".into()));
        }
        if !(tau > T::zero()) || !tau.is_finite() {
            return Err(Error::InvalidConfig("step size must be positive and finite".into()));
        }
        let n = values[0].mesh().n();
        if values.iter().any(|v| v.mesh().n() != n) {
            return Err(Error::InvalidConfig("step process values share one mesh".into()));
        }
        Ok(Self { values, tau })
    }

    pub fn constant(value: FeFunction<T>, steps: usize, tau: T) -> Result<Self> {
        Self::new(vec![value; steps], tau)
    }

    pub fn steps(&self) -> usize {
        self.values.len()
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn value(&self, j: usize) -> &FeFunction<T> {
        &self.values[j]
    }

    pub fn mesh(&self) -> &Arc<Mesh<T>> {
        self.values[0].mesh()
    }
}

/// Monte-Carlo check of the discrete Ito isometry.
#[derive(Debug, Clone)]
pub struct IsometryCheck {
    /// Mean of ||sum_j g dbeta_j||^2 over paths, divided by the exact side.
    pub ratio: f64,
    /// 99% normal confidence interval for the ratio.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Monte-Carlo estimate of the expected squared integral.
    pub lhs_mean: f64,
    /// (sum_n lambda_n) * tau * sum_j ||g(t_j)||^2, exact.
    pub rhs: f64,
    pub paths: usize,
}

/// Estimates E||sum_j g(t_j) dW_j||_{L2}^2 over `m_paths` fresh paths and
/// compares with the Ito isometry value. Both sides carry the mode
/// intensities, so scaling lambda scales them together.
pub fn ito_isometry_check<T: Real>(
    model: &NoiseModel<T>,
    g: &StepProcess<T>,
    m_paths: usize,
    seed: u64,
    quad: &Quadrature<T>,
) -> Result<IsometryCheck> {
    if m_paths == 0 {
        return Err(Error::InvalidConfig("need at least one path".into()));
    }
    let steps = g.steps();
    let t_horizon = g.tau() * T::of_usize(steps);
    let sqrt_lambda: Vec<T> = model.modes.iter().map(|m| m.lambda.sqrt()).collect();
    let two = T::of(2.0);

    let mut rhs = 0.0;
    for j in 0..steps {
        let norm = lq_norm(g.value(j), two, quad)?.as_f64();
        rhs += norm * norm;
    }
    rhs *= g.tau().as_f64() * model.modes.iter().map(|m| m.lambda.as_f64()).sum::<f64>();

    let mut samples = Vec::with_capacity(m_paths);
    for path in 0..m_paths {
        let paths = generate_paths(model, seed, path as u64, steps, t_horizon)?;
        let mut x = FeFunction::zero(g.mesh().clone());
        for j in 0..steps {
            let mut c = T::zero();
            for (mode, sl) in sqrt_lambda.iter().enumerate() {
                c += *sl * paths.mode_increments(mode)[j];
            }
            x.axpy(c, g.value(j));
        }
        let norm = lq_norm(&x, two, quad)?.as_f64();
        samples.push(norm * norm);
    }
    let mean = samples.iter().sum::<f64>() / m_paths as f64;
    let var = if m_paths > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m_paths as f64 - 1.0)
    } else {
        0.0
    };
    let se = (var / m_paths as f64).sqrt();
    let half = 2.5758 * se;
    Ok(IsometryCheck {
        ratio: mean / rhs,
        ci_low: (mean - half) / rhs,
        ci_high: (mean + half) / rhs,
        lhs_mean: mean,
        rhs,
        paths: m_paths,
    })
}
