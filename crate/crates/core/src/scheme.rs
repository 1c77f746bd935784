//! The full discretization: linearly implicit Laplacian, explicit reaction,
//! implicit cubic, left-point noise. One step solves
//!
//!   (M + tau A) Y_{j+1} + tau cubic_load(Y_{j+1})
//!       = M (1 + tau r) Y_j + noise_load(Y_j, dbeta_j)
//!
//! by damped Newton from the initial guess Y_j; with the cubic disabled the
//! step is a single CG solve. The noise load is the mass-matrix image of
//! the projected stochastic increment, used directly on the right-hand side
//! so no extra mass solve is spent per step.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{
    add_cubic_jacobian_scaled, assemble_mass, assemble_stiffness, cubic_load, cubic_scatter_map,
    l2_project_with, FeFunction, Quadrature,
};
use crate::linalg::{cg_solve, newton_solve, SolverConfig, SparseMatrix};
use crate::mesh::{build_structured_mesh, Mesh};
use crate::noise::{noise_load, BrownianPaths, NoiseModel};
use crate::scalar::Real;

/// Everything fixed over one simulation: horizon, step count, mesh
/// resolution, model switches, and solver tolerances.
#[derive(Debug, Clone)]
pub struct SchemeConfig<T: Real> {
    pub t_horizon: T,
    /// Number of time steps J; tau = t_horizon / J.
    pub steps: usize,
    /// Mesh subdivisions per axis.
    pub n: u32,
    pub cubic_enabled: bool,
    /// Coefficient of the explicit "+ r y" reaction term.
    pub reaction_coeff: T,
    /// L^q exponents reported by the studies.
    pub q_list: Vec<T>,
    /// Moment exponents reported by the studies.
    pub p_list: Vec<T>,
    pub solver: SolverConfig<T>,
    /// Permits tau > h^2; the violation is still reported as a warning.
    pub allow_tau_above_h2: bool,
}

impl<T: Real> Default for SchemeConfig<T> {
    fn default() -> Self {
        Self {
            t_horizon: T::one(),
            steps: 64,
            n: 4,
            cubic_enabled: true,
            reaction_coeff: T::one(),
            q_list: vec![T::of(2.0), T::of(4.0)],
            p_list: vec![T::of(2.0), T::of(4.0)],
            solver: SolverConfig::default(),
            allow_tau_above_h2: false,
        }
    }
}

impl<T: Real> SchemeConfig<T> {
    pub fn tau(&self) -> T {
        self.t_horizon / T::of_usize(self.steps)
    }

    /// Squared mesh size for the tau <= h^2 stability condition.
    pub fn h_squared(&self) -> T {
        let h = Mesh::<T>::h_of(self.n);
        h * h
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_horizon > T::zero()) || !self.t_horizon.is_finite() {
            return Err(Error::InvalidConfig("horizon must be positive and finite".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("need at least one time step".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("mesh needs at least one subdivision".into()));
        }
        if !self.reaction_coeff.is_finite() {
            return Err(Error::InvalidConfig("reaction coefficient must be finite".into()));
        }
        for q in self.q_list.iter().chain(&self.p_list) {
            if !(*q >= T::of(2.0)) || !q.is_finite() {
                return Err(Error::ExponentRange(q.as_f64()));
            }
        }
        self.solver.validate()?;
        if !self.allow_tau_above_h2 && self.tau() > self.h_squared() {
            return Err(Error::TauAboveH2 {
                tau: self.tau().as_f64(),
                h2: self.h_squared().as_f64(),
            });
        }
        Ok(())
    }

    /// Warning text when running outside the tau <= h^2 regime.
    pub fn tau_warning(&self) -> Option<String> {
        if self.tau() > self.h_squared() {
            Some(format!(
                "tau={:e} exceeds h^2={:e}; stability is outside the supported regime",
                self.tau().as_f64(),
                self.h_squared().as_f64()
            ))
        } else {
            None
        }
    }
}

/// Snapshots and per-step diagnostics of one simulated path.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Real> {
    checkpoints: Vec<(usize, FeFunction<T>)>,
    newton_iters: Vec<usize>,
    master_seed: u64,
    path_index: u64,
    tau: T,
}

impl<T: Real> Trajectory<T> {
    /// (step index, state) pairs; always includes j = 0 and j = J.
    pub fn checkpoints(&self) -> &[(usize, FeFunction<T>)] {
        &self.checkpoints
    }

    pub fn checkpoint(&self, j: usize) -> Option<&FeFunction<T>> {
        self.checkpoints
            .iter()
            .find(|(cj, _)| *cj == j)
            .map(|(_, f)| f)
    }

    pub fn final_state(&self) -> &FeFunction<T> {
        &self.checkpoints.last().expect("nonempty by construction").1
    }

    pub fn newton_iters(&self) -> &[usize] {
        &self.newton_iters
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn time_of(&self, j: usize) -> T {
        self.tau * T::of_usize(j)
    }
}

/// Assembled operators for one (mesh, tau) pair; immutable and shareable
/// across paths and threads.
pub struct Stepper<T: Real> {
    cfg: SchemeConfig<T>,
    model: NoiseModel<T>,
    mesh: Arc<Mesh<T>>,
    mass: SparseMatrix<T>,
    stiffness: SparseMatrix<T>,
    /// M + tau A.
    system: SparseMatrix<T>,
    /// Per-tet value slots in `system` for the cubic Jacobian scatter;
    /// empty when the cubic term is disabled.
    cubic_scatter: Vec<[u32; 16]>,
    quad: Quadrature<T>,
}

impl<T: Real> Stepper<T> {
    pub fn new(cfg: SchemeConfig<T>, model: NoiseModel<T>) -> Result<Self> {
        let mesh = build_structured_mesh(cfg.n)?;
        Self::with_mesh(cfg, model, mesh)
    }

    /// Reuses an existing mesh (the studies share meshes across levels).
    pub fn with_mesh(
        cfg: SchemeConfig<T>,
        model: NoiseModel<T>,
        mesh: Arc<Mesh<T>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if mesh.n() != cfg.n {
            return Err(Error::InvalidConfig(format!(
                "mesh has n={}, config says n={}",
                mesh.n(),
                cfg.n
            )));
        }
        let mass = assemble_mass(&mesh)?;
        let stiffness = assemble_stiffness(&mesh)?;
        let system = SparseMatrix::linear_combination(&[(T::one(), &mass), (cfg.tau(), &stiffness)])?;
        let cubic_scatter = if cfg.cubic_enabled {
            cubic_scatter_map(&mesh, &system)?
        } else {
            Vec::new()
        };
        Ok(Self {
            cfg,
            model,
            mesh,
            mass,
            stiffness,
            system,
            cubic_scatter,
            quad: Quadrature::degree2(),
        })
    }

    pub fn config(&self) -> &SchemeConfig<T> {
        &self.cfg
    }

    pub fn model(&self) -> &NoiseModel<T> {
        &self.model
    }

    pub fn mesh(&self) -> &Arc<Mesh<T>> {
        &self.mesh
    }

    pub fn mass(&self) -> &SparseMatrix<T> {
        &self.mass
    }

    pub fn stiffness(&self) -> &SparseMatrix<T> {
        &self.stiffness
    }

    pub fn tau(&self) -> T {
        self.cfg.tau()
    }

    /// Y_0 = P_h v.
    pub fn initial_state(&self, v: impl Fn([T; 3]) -> T) -> Result<FeFunction<T>> {
        l2_project_with(&self.mass, &self.mesh, v, &self.quad, &self.cfg.solver)
    }

    /// Right-hand side M (1 + tau r) Y_j + noise load.
    fn rhs(&self, y: &FeFunction<T>, dbeta: &[T]) -> Result<Vec<T>> {
        let factor = T::one() + self.cfg.tau() * self.cfg.reaction_coeff;
        let mut b = self.mass.mul_vec_alloc(y.coeffs());
        for v in b.iter_mut() {
            *v = *v * factor;
        }
        if !dbeta.is_empty() || self.model.mode_count() > 0 {
            let noise = noise_load(&self.model, y, dbeta, &self.quad)?;
            for (v, nv) in b.iter_mut().zip(noise) {
                *v += nv;
            }
        }
        Ok(b)
    }

    /// Advances one step; returns the new state and the Newton iteration
    /// count (zero for the linear path).
    pub fn step(&self, y: &FeFunction<T>, dbeta: &[T]) -> Result<(FeFunction<T>, usize)> {
        let rhs = self.rhs(y, dbeta)?;
        if !self.cfg.cubic_enabled {
            let x = cg_solve(&self.system, &rhs, &self.cfg.solver)?;
            return Ok((FeFunction::from_raw(self.mesh.clone(), x), 0));
        }
        let tau = self.cfg.tau();
        let residual = |x: &[T]| -> Result<Vec<T>> {
            let xf = FeFunction::from_raw(self.mesh.clone(), x.to_vec());
            let cubic = cubic_load(&xf, &self.quad)?;
            let mut r = self.system.mul_vec_alloc(x);
            for ((rv, cv), bv) in r.iter_mut().zip(cubic).zip(&rhs) {
                *rv = *rv + tau * cv - *bv;
            }
            Ok(r)
        };
        let jacobian = |x: &[T]| -> Result<SparseMatrix<T>> {
            let xf = FeFunction::from_raw(self.mesh.clone(), x.to_vec());
            let mut j = self.system.clone();
            add_cubic_jacobian_scaled(&xf, &self.quad, tau, &self.cubic_scatter, &mut j)?;
            Ok(j)
        };
        let (x, iters) = newton_solve(residual, jacobian, y.coeffs(), &self.cfg.solver)?;
        Ok((FeFunction::from_raw(self.mesh.clone(), x), iters))
    }

    /// Runs all J steps of one path, checkpointing every `stride` steps plus
    /// the initial and final states.
    pub fn simulate_path(
        &self,
        y0: &FeFunction<T>,
        paths: &BrownianPaths<T>,
        stride: usize,
    ) -> Result<Trajectory<T>> {
        if paths.steps() != self.cfg.steps {
            return Err(Error::PathLengthMismatch {
                expected: self.cfg.steps,
                got: paths.steps(),
            });
        }
        if paths.mode_count() != self.model.mode_count() {
            return Err(Error::DimensionMismatch {
                expected: self.model.mode_count(),
                got: paths.mode_count(),
            });
        }
        if stride == 0 {
            return Err(Error::InvalidConfig("checkpoint stride must be positive".into()));
        }
        let steps = self.cfg.steps;
        let mut checkpoints = Vec::with_capacity(steps / stride + 2);
        let mut newton_iters = Vec::with_capacity(steps);
        let mut y = y0.clone();
        checkpoints.push((0, y.clone()));
        for j in 0..steps {
            let dbeta = paths.step_increments(j);
            let (next, iters) = self.step(&y, &dbeta).map_err(|e| Error::StepFailed {
                step: j,
                source: Box::new(e),
            })?;
            newton_iters.push(iters);
            y = next;
            let jn = j + 1;
            if jn % stride == 0 || jn == steps {
                checkpoints.push((jn, y.clone()));
            }
        }
        Ok(Trajectory {
            checkpoints,
            newton_iters,
            master_seed: paths.master_seed(),
            path_index: paths.path_index(),
            tau: self.cfg.tau(),
        })
    }
}
