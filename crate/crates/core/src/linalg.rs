//! Symmetric sparse matrices in CSR form, Jacobi-preconditioned conjugate
//! gradients, and a damped Newton iteration.
//!
//! Everything here is deterministic: fixed traversal order, no pivoting, no
//! randomized starting points.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Symmetric positive (semi)definite matrix in compressed sparse row form.
///
/// Both triangles are stored so matrix-vector products are a single pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T> {
    dim: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> SparseMatrix<T> {
    /// Builds from (row, col, value) triplets; duplicate entries are summed.
    pub fn from_triplets(
        dim: usize,
        triplets: impl IntoIterator<Item = (usize, usize, T)>,
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); dim];
        for (r, c, v) in triplets {
            if r >= dim || c >= dim {
                return Err(Error::IndexOutOfBounds {
                    row: r,
                    col: c,
                    dim,
                });
            }
            rows[r].push((c, v));
        }
        let mut row_offsets = Vec::with_capacity(dim + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for row in &mut rows {
            row.sort_unstable_by_key(|&(c, _)| c);
            let mut iter = row.iter();
            if let Some(&(first_col, first_val)) = iter.next() {
                let mut cur_col = first_col;
                let mut cur_val = first_val;
                for &(c, v) in iter {
                    if c == cur_col {
                        cur_val += v;
                    } else {
                        col_indices.push(cur_col);
                        values.push(cur_val);
                        cur_col = c;
                        cur_val = v;
                    }
                }
                col_indices.push(cur_col);
                values.push(cur_val);
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            dim,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored value at (row, col); zero if the entry is not present.
    pub fn value_at(&self, row: usize, col: usize) -> T {
        match self.entry_index(row, col) {
            Some(k) => self.values[k],
            None => T::zero(),
        }
    }

    /// Position of (row, col) in the value array, if stored.
    pub fn entry_index(&self, row: usize, col: usize) -> Option<usize> {
        let lo = self.row_offsets[row];
        let hi = self.row_offsets[row + 1];
        self.col_indices[lo..hi].binary_search(&col).ok().map(|k| lo + k)
    }

    /// In-place access for value updates over a fixed pattern.
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        for r in 0..self.dim {
            let mut acc = T::zero();
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            y[r] = acc;
        }
    }

    pub fn mul_vec_alloc(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.dim];
        self.mul_vec(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.dim).map(|r| self.value_at(r, r)).collect()
    }

    /// Largest asymmetry |a_ij - a_ji| over stored entries.
    pub fn symmetry_defect(&self) -> T {
        let mut worst = T::zero();
        for r in 0..self.dim {
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                let c = self.col_indices[k];
                let d = (self.values[k] - self.value_at(c, r)).abs();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.row_offsets == other.row_offsets
            && self.col_indices == other.col_indices
    }

    /// self += coeff * other; both matrices must share one sparsity pattern.
    pub fn add_scaled_assign(&mut self, coeff: T, other: &Self) -> Result<()> {
        if !self.same_pattern(other) {
            return Err(Error::PatternMismatch);
        }
        for (v, &o) in self.values.iter_mut().zip(other.values.iter()) {
            *v += coeff * o;
        }
        Ok(())
    }

    /// sum of coeff_k * A_k over matching patterns.
    pub fn linear_combination(terms: &[(T, &Self)]) -> Result<Self> {
        let (c0, a0) = terms.first().ok_or_else(|| {
            Error::InvalidConfig("linear_combination needs at least one term".into())
        })?;
        let mut out = (*a0).clone();
        for v in out.values.iter_mut() {
            *v = *c0 * *v;
        }
        for (c, a) in &terms[1..] {
            out.add_scaled_assign(*c, a)?;
        }
        Ok(out)
    }
}

/// Tolerances and iteration caps shared by the linear and nonlinear solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig<T> {
    /// Relative residual target for conjugate gradients.
    pub cg_rel_tol: T,
    /// Iteration cap for cg; `None` means 10 * sqrt(dofs) + 100.
    pub cg_max_iter: Option<usize>,
    /// Step-norm tolerance for Newton.
    pub newton_tol: T,
    pub newton_max_iter: usize,
    /// Backtracking factor for the Newton line search.
    pub newton_damping: T,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            cg_rel_tol: T::of(1e-10),
            cg_max_iter: None,
            newton_tol: T::of(1e-11),
            newton_max_iter: 25,
            newton_damping: T::of(0.5),
        }
    }
}

impl<T: Real> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.cg_rel_tol > T::zero()) || !self.cg_rel_tol.is_finite() {
            return Err(Error::InvalidConfig("cg_rel_tol must be positive".into()));
        }
        if self.cg_max_iter == Some(0) {
            return Err(Error::InvalidConfig("cg_max_iter must be at least 1".into()));
        }
        if !(self.newton_tol > T::zero()) || !self.newton_tol.is_finite() {
            return Err(Error::InvalidConfig("newton_tol must be positive".into()));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::InvalidConfig(
                "newton_max_iter must be at least 1".into(),
            ));
        }
        if !(self.newton_damping > T::zero() && self.newton_damping < T::one()) {
            return Err(Error::InvalidConfig(
                "newton_damping must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Effective cg iteration cap for a system of the given dimension.
    pub fn cg_iter_cap(&self, dim: usize) -> usize {
        self.cg_max_iter
            .unwrap_or_else(|| 10 * (dim as f64).sqrt().ceil() as usize + 100)
    }
}

fn norm2<T: Real>(v: &[T]) -> T {
    let mut acc = T::zero();
    for &x in v {
        acc += x * x;
    }
    acc.sqrt()
}

/// Jacobi-preconditioned conjugate gradients from a zero start.
///
/// Fails with the final relative residual when the iteration cap is hit.
pub fn cg_solve<T: Real>(a: &SparseMatrix<T>, b: &[T], cfg: &SolverConfig<T>) -> Result<Vec<T>> {
    cg_solve_traced(a, b, cfg).map(|(x, _)| x)
}

/// Like [`cg_solve`] but also returns the residual norm after each iteration.
pub fn cg_solve_traced<T: Real>(
    a: &SparseMatrix<T>,
    b: &[T],
    cfg: &SolverConfig<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    cfg.validate()?;
    let dim = a.dim();
    if b.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: b.len(),
        });
    }
    let b_norm = norm2(b);
    let mut x = vec![T::zero(); dim];
    if b_norm == T::zero() {
        return Ok((x, Vec::new()));
    }
    let mut inv_diag = Vec::with_capacity(dim);
    for (r, d) in a.diagonal().into_iter().enumerate() {
        if !(d > T::zero()) {
            return Err(Error::NonPositiveDiagonal { row: r });
        }
        inv_diag.push(T::one() / d);
    }

    let mut r = b.to_vec();
    let mut z: Vec<T> = r.iter().zip(&inv_diag).map(|(&ri, &di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![T::zero(); dim];
    let cap = cfg.cg_iter_cap(dim);
    let mut history = Vec::new();
    let mut rel = T::one();
    for _ in 0..cap {
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            // Indefinite or breakdown; report as a stall with the current residual.
            return Err(Error::CgStalled {
                iterations: history.len(),
                residual: rel.as_f64(),
            });
        }
        let alpha = rz / pap;
        for i in 0..dim {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let r_norm = norm2(&r);
        rel = r_norm / b_norm;
        history.push(r_norm);
        if rel <= cfg.cg_rel_tol {
            return Ok((x, history));
        }
        for i in 0..dim {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..dim {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::CgStalled {
        iterations: cap,
        residual: rel.as_f64(),
    })
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Damped Newton iteration with a backtracking line search.
///
/// `residual` and `jacobian` evaluate F(x) and F'(x); the inner linear solves
/// use [`cg_solve`], so Jacobians must be symmetric positive definite. Exits
/// once the accepted step has euclidean norm at most `newton_tol`, returning
/// the iterate and the number of accepted steps. A residual that is exactly
/// zero at the start returns immediately with zero iterations.
pub fn newton_solve<T, FR, FJ>(
    mut residual: FR,
    mut jacobian: FJ,
    x0: &[T],
    cfg: &SolverConfig<T>,
) -> Result<(Vec<T>, usize)>
where
    T: Real,
    FR: FnMut(&[T]) -> Result<Vec<T>>,
    FJ: FnMut(&[T]) -> Result<SparseMatrix<T>>,
{
    cfg.validate()?;
    let mut x = x0.to_vec();
    let mut r = residual(&x)?;
    let mut r_norm = norm2(&r);
    if r_norm == T::zero() {
        return Ok((x, 0));
    }
    const MAX_BACKTRACKS: usize = 40;
    for it in 1..=cfg.newton_max_iter {
        let jac = jacobian(&x)?;
        let neg_r: Vec<T> = r.iter().map(|&v| -v).collect();
        let dx = cg_solve(&jac, &neg_r, cfg)?;

        // A full step below tolerance means the iterate is converged to
        // rounding; demanding a residual decrease there would chase noise.
        if norm2(&dx) <= cfg.newton_tol {
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += *di;
            }
            return Ok((x, it));
        }

        let mut alpha = T::one();
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<T> = x
                .iter()
                .zip(&dx)
                .map(|(&xi, &di)| xi + alpha * di)
                .collect();
            let trial_r = residual(&trial)?;
            let trial_norm = norm2(&trial_r);
            if trial_norm < r_norm {
                accepted = Some((trial, trial_r, trial_norm, alpha));
                break;
            }
            alpha = alpha * cfg.newton_damping;
        }
        let Some((next_x, next_r, next_norm, alpha)) = accepted else {
            return Err(Error::NewtonDiverged {
                iterations: it,
                residual: r_norm.as_f64(),
            });
        };
        let step_norm = alpha * norm2(&dx);
        x = next_x;
        r = next_r;
        r_norm = next_norm;
        if step_norm <= cfg.newton_tol {
            return Ok((x, it));
        }
    }
    Err(Error::NewtonStalled {
        iterations: cfg.newton_max_iter,
        residual: r_norm.as_f64(),
    })
}
