//! P1 finite element core: basis functions on Kuhn meshes, quadrature,
//! assembly of mass and stiffness, the L2 projection, L^q norms, and the
//! cubic nonlinearity terms.
//!
//! Mass and stiffness entries use exact per-element formulas. Load integrals
//! use the degree-2 4-point rule by default; norms should be computed with
//! the degree-5 rule so |u|^q for q in {2, 4} is integrated exactly on P1
//! functions (both constructors are on [`Quadrature`]).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{cg_solve, SolverConfig, SparseMatrix};
use crate::mesh::Mesh;
use crate::scalar::Real;

/// P1 function given by its interior vertex coefficients; boundary values
/// are zero (homogeneous Dirichlet).
#[derive(Debug, Clone)]
pub struct FeFunction<T: Real> {
    mesh: Arc<Mesh<T>>,
    coeffs: Vec<T>,
}

impl<T: Real> FeFunction<T> {
    pub fn zero(mesh: Arc<Mesh<T>>) -> Self {
        let coeffs = vec![T::zero(); mesh.dof_count()];
        Self { mesh, coeffs }
    }

    /// Wraps coefficients after validating length and finiteness.
    pub fn from_coeffs(mesh: Arc<Mesh<T>>, coeffs: Vec<T>) -> Result<Self> {
        if coeffs.len() != mesh.dof_count() {
            return Err(Error::DimensionMismatch {
                expected: mesh.dof_count(),
                got: coeffs.len(),
            });
        }
        for (d, &c) in coeffs.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::NonFiniteSample {
                    vertex: mesh.vertex_of_dof(d),
                });
            }
        }
        Ok(Self { mesh, coeffs })
    }

    pub(crate) fn from_raw(mesh: Arc<Mesh<T>>, coeffs: Vec<T>) -> Self {
        debug_assert_eq!(coeffs.len(), mesh.dof_count());
        Self { mesh, coeffs }
    }

    pub fn mesh(&self) -> &Arc<Mesh<T>> {
        &self.mesh
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [T] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<T> {
        self.coeffs
    }

    /// Point evaluation anywhere in the closed unit cube.
    pub fn eval(&self, x: [T; 3]) -> T {
        self.mesh.eval_dofs(&self.coeffs, x)
    }

    /// Value at a vertex id; zero on the boundary.
    pub fn vertex_value(&self, v: usize) -> T {
        match self.mesh.dof_of_vertex(v) {
            Some(d) => self.coeffs[d],
            None => T::zero(),
        }
    }

    /// self += c * other (same mesh required).
    pub fn axpy(&mut self, c: T, other: &Self) {
        assert_eq!(self.mesh.n(), other.mesh.n(), "mesh mismatch");
        for (a, &b) in self.coeffs.iter_mut().zip(other.coeffs.iter()) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: T) {
        for a in self.coeffs.iter_mut() {
            *a = *a * c;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.mesh.n(), other.mesh.n(), "mesh mismatch");
        let coeffs = self
            .coeffs
            .iter()
            .zip(other.coeffs.iter())
            .map(|(&a, &b)| a - b)
            .collect();
        Self {
            mesh: self.mesh.clone(),
            coeffs,
        }
    }
}

/// Symmetric quadrature rule on the reference tetrahedron in barycentric
/// coordinates; weights are positive and sum to one.
#[derive(Debug, Clone)]
pub struct Quadrature<T> {
    points: Vec<[T; 4]>,
    weights: Vec<T>,
}

impl<T: Real> Quadrature<T> {
    /// 4-point rule, exact for polynomials of degree 2. Used for assembly
    /// and load integrals.
    pub fn degree2() -> Self {
        let a = T::of((5.0 + 3.0 * 5f64.sqrt()) / 20.0);
        let b = T::of((5.0 - 5f64.sqrt()) / 20.0);
        let w = T::of(0.25);
        let mut points = Vec::with_capacity(4);
        for i in 0..4 {
            let mut p = [b; 4];
            p[i] = a;
            points.push(p);
        }
        Self {
            points,
            weights: vec![w; 4],
        }
    }

    /// 14-point rule with positive weights, exact for polynomials of degree
    /// 5. Used for L^q norms so q in {2, 4} is integrated exactly.
    pub fn degree5() -> Self {
        let mut points = Vec::with_capacity(14);
        let mut weights = Vec::with_capacity(14);
        let groups4 = [
            (0.721794249067326322, 0.092735250310891226, 0.073493043116361950),
            (0.067342242210098170, 0.310885919263300610, 0.112687925718015843),
        ];
        for &(a, b, w) in &groups4 {
            for i in 0..4 {
                let mut p = [T::of(b); 4];
                p[i] = T::of(a);
                points.push(p);
                weights.push(T::of(w));
            }
        }
        let c = 0.454496295874350351;
        let d = 0.045503704125649649;
        let w6 = 0.042546020777081467;
        for i in 0..4 {
            for j in (i + 1)..4 {
                let mut p = [T::of(d); 4];
                p[i] = T::of(c);
                p[j] = T::of(c);
                points.push(p);
                weights.push(T::of(w6));
            }
        }
        Self { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[T; 4]] {
        &self.points
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }
}

fn cross<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn tet_coords<T: Real>(mesh: &Mesh<T>, tet: &[usize; 4]) -> [[T; 3]; 4] {
    [
        mesh.vertex(tet[0]),
        mesh.vertex(tet[1]),
        mesh.vertex(tet[2]),
        mesh.vertex(tet[3]),
    ]
}

/// Signed volume; errors unless it is strictly positive and finite.
pub(crate) fn checked_volume<T: Real>(p: &[[T; 3]; 4], tet: usize) -> Result<T> {
    let e = |a: usize| {
        [
            p[a][0] - p[0][0],
            p[a][1] - p[0][1],
            p[a][2] - p[0][2],
        ]
    };
    let det = dot3(e(1), cross(e(2), e(3)));
    let vol = det / T::of(6.0);
    if !vol.is_finite() || !(vol > T::zero()) {
        return Err(Error::DegenerateTet {
            tet,
            volume: vol.as_f64(),
        });
    }
    Ok(vol)
}

/// Exact element mass matrix: V/10 on the diagonal, V/20 off it.
pub(crate) fn element_mass<T: Real>(vol: T) -> [[T; 4]; 4] {
    let off = vol / T::of(20.0);
    let diag = vol / T::of(10.0);
    let mut m = [[off; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = diag;
    }
    m
}

/// Element stiffness matrix V * (grad l_a . grad l_b) from the reciprocal
/// edge vectors.
pub(crate) fn element_stiffness<T: Real>(p: &[[T; 3]; 4], tet: usize) -> Result<[[T; 4]; 4]> {
    let vol = checked_volume(p, tet)?;
    let det = vol * T::of(6.0);
    let e = |a: usize| {
        [
            p[a][0] - p[0][0],
            p[a][1] - p[0][1],
            p[a][2] - p[0][2],
        ]
    };
    let inv_det = T::one() / det;
    let mut g = [[T::zero(); 3]; 4];
    let rows = [
        cross(e(2), e(3)),
        cross(e(3), e(1)),
        cross(e(1), e(2)),
    ];
    for (i, r) in rows.iter().enumerate() {
        for c in 0..3 {
            g[i + 1][c] = r[c] * inv_det;
            g[0][c] = g[0][c] - r[c] * inv_det;
        }
    }
    let mut k = [[T::zero(); 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            k[a][b] = vol * dot3(g[a], g[b]);
        }
    }
    Ok(k)
}

enum ElementKind {
    Mass,
    Stiffness,
}

fn assemble_p1<T: Real>(
    mesh: &Mesh<T>,
    dof: &dyn Fn(usize) -> Option<usize>,
    dim: usize,
    kind: ElementKind,
) -> Result<SparseMatrix<T>> {
    let mut triplets = Vec::with_capacity(mesh.tet_count() * 16);
    for (t, tet) in mesh.tets().iter().enumerate() {
        let p = tet_coords(mesh, tet);
        let elem = match kind {
            ElementKind::Mass => element_mass(checked_volume(&p, t)?),
            ElementKind::Stiffness => element_stiffness(&p, t)?,
        };
        for a in 0..4 {
            let Some(i) = dof(tet[a]) else { continue };
            for b in 0..4 {
                let Some(j) = dof(tet[b]) else { continue };
                triplets.push((i, j, elem[a][b]));
            }
        }
    }
    SparseMatrix::from_triplets(dim, triplets)
}

/// Mass matrix over the interior dofs.
pub fn assemble_mass<T: Real>(mesh: &Mesh<T>) -> Result<SparseMatrix<T>> {
    assemble_p1(
        mesh,
        &|v| mesh.dof_of_vertex(v),
        mesh.dof_count(),
        ElementKind::Mass,
    )
}

/// Mass matrix over all vertices including the boundary.
pub fn assemble_mass_full<T: Real>(mesh: &Mesh<T>) -> Result<SparseMatrix<T>> {
    assemble_p1(mesh, &Some, mesh.vertex_count(), ElementKind::Mass)
}

/// Stiffness matrix over the interior dofs.
pub fn assemble_stiffness<T: Real>(mesh: &Mesh<T>) -> Result<SparseMatrix<T>> {
    assemble_p1(
        mesh,
        &|v| mesh.dof_of_vertex(v),
        mesh.dof_count(),
        ElementKind::Stiffness,
    )
}

/// Stiffness matrix over all vertices including the boundary.
pub fn assemble_stiffness_full<T: Real>(mesh: &Mesh<T>) -> Result<SparseMatrix<T>> {
    assemble_p1(mesh, &Some, mesh.vertex_count(), ElementKind::Stiffness)
}

/// Load vector b_i = integral of f * phi_i over interior basis functions.
pub fn load_vector<T: Real>(
    mesh: &Mesh<T>,
    f: impl Fn([T; 3]) -> T,
    quad: &Quadrature<T>,
) -> Result<Vec<T>> {
    let mut b = vec![T::zero(); mesh.dof_count()];
    for (t, tet) in mesh.tets().iter().enumerate() {
        let p = tet_coords(mesh, tet);
        let vol = checked_volume(&p, t)?;
        for (lam, &w) in quad.points().iter().zip(quad.weights()) {
            let mut x = [T::zero(); 3];
            for (a, pa) in p.iter().enumerate() {
                for c in 0..3 {
                    x[c] += lam[a] * pa[c];
                }
            }
            let fv = f(x) * w * vol;
            for (a, &v) in tet.iter().enumerate() {
                if let Some(d) = mesh.dof_of_vertex(v) {
                    b[d] += fv * lam[a];
                }
            }
        }
    }
    Ok(b)
}

/// L2 projection with a caller-supplied (matching) mass matrix.
pub fn l2_project_with<T: Real>(
    mass: &SparseMatrix<T>,
    mesh: &Arc<Mesh<T>>,
    f: impl Fn([T; 3]) -> T,
    quad: &Quadrature<T>,
    solver: &SolverConfig<T>,
) -> Result<FeFunction<T>> {
    let b = load_vector(mesh, f, quad)?;
    let coeffs = cg_solve(mass, &b, solver)?;
    Ok(FeFunction::from_raw(mesh.clone(), coeffs))
}

/// L2 projection P_h f, solving M u = (f, phi_i).
pub fn l2_project<T: Real>(
    mesh: &Arc<Mesh<T>>,
    f: impl Fn([T; 3]) -> T,
    quad: &Quadrature<T>,
    solver: &SolverConfig<T>,
) -> Result<FeFunction<T>> {
    let mass = assemble_mass(mesh)?;
    l2_project_with(&mass, mesh, f, quad, solver)
}

/// Strategy for |v|^q: even integer exponents avoid transcendental calls.
#[derive(Clone, Copy)]
pub(crate) struct QPow<T> {
    q: T,
    even: Option<i32>,
}

impl<T: Real> QPow<T> {
    pub(crate) fn new(q: T) -> Result<Self> {
        if !(q >= T::of(2.0)) || !q.is_finite() {
            return Err(Error::ExponentRange(q.as_f64()));
        }
        let qf = q.as_f64();
        let even = if qf.fract() == 0.0 && (qf as i64) % 2 == 0 && qf <= 64.0 {
            Some(qf as i32)
        } else {
            None
        };
        Ok(Self { q, even })
    }

    #[inline]
    pub(crate) fn abs_pow(&self, v: T) -> T {
        match self.even {
            Some(k) => v.powi(k),
            None => v.abs().powf(self.q),
        }
    }

    pub(crate) fn root(&self, acc: T) -> T {
        if self.q == T::of(2.0) {
            acc.sqrt()
        } else {
            acc.powf(T::one() / self.q)
        }
    }
}

pub(crate) fn gather<T: Real>(u: &FeFunction<T>, tet: &[usize; 4]) -> [T; 4] {
    [
        u.vertex_value(tet[0]),
        u.vertex_value(tet[1]),
        u.vertex_value(tet[2]),
        u.vertex_value(tet[3]),
    ]
}

/// L^q norm by quadrature, q >= 2.
pub fn lq_norm<T: Real>(u: &FeFunction<T>, q: T, quad: &Quadrature<T>) -> Result<T> {
    let pow = QPow::new(q)?;
    let mesh = u.mesh();
    let mut acc = T::zero();
    for (t, tet) in mesh.tets().iter().enumerate() {
        let p = tet_coords(mesh, tet);
        let vol = checked_volume(&p, t)?;
        let vals = gather(u, tet);
        for (lam, &w) in quad.points().iter().zip(quad.weights()) {
            let v = lam[0] * vals[0] + lam[1] * vals[1] + lam[2] * vals[2] + lam[3] * vals[3];
            acc += w * vol * pow.abs_pow(v);
        }
    }
    Ok(pow.root(acc))
}

/// L^q distance between a P1 function and an analytic field.
pub fn lq_error<T: Real>(
    u: &FeFunction<T>,
    f: impl Fn([T; 3]) -> T,
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
            let mut x = [T::zero(); 3];
            for (a, pa) in p.iter().enumerate() {
                for c in 0..3 {
                    x[c] += lam[a] * pa[c];
                }
            }
            let v = lam[0] * vals[0] + lam[1] * vals[1] + lam[2] * vals[2] + lam[3] * vals[3]
                - f(x);
            acc += w * vol * pow.abs_pow(v);
        }
    }
    Ok(pow.root(acc))
}

/// sqrt(x' M x), the exact L2 norm of the P1 function with coefficients x.
pub fn m_norm<T: Real>(mass: &SparseMatrix<T>, x: &[T]) -> T {
    let mx = mass.mul_vec_alloc(x);
    let mut acc = T::zero();
    for (&a, &b) in x.iter().zip(&mx) {
        acc += a * b;
    }
    acc.sqrt()
}

/// Load vector of the cubic term, b_i = integral of u^3 * phi_i.
///
/// The integrand has degree 4; with the degree-2 rule it is under-integrated
/// by design (a variational crime quantified in the tests).
pub fn cubic_load<T: Real>(u: &FeFunction<T>, quad: &Quadrature<T>) -> Result<Vec<T>> {
    let mesh = u.mesh();
    let mut b = vec![T::zero(); mesh.dof_count()];
    for (t, tet) in mesh.tets().iter().enumerate() {
        let p = tet_coords(mesh, tet);
        let vol = checked_volume(&p, t)?;
        let vals = gather(u, tet);
        for (lam, &w) in quad.points().iter().zip(quad.weights()) {
            let v = lam[0] * vals[0] + lam[1] * vals[1] + lam[2] * vals[2] + lam[3] * vals[3];
            let cube = v * v * v * w * vol;
            for (a, &vt) in tet.iter().enumerate() {
                if let Some(d) = mesh.dof_of_vertex(vt) {
                    b[d] += cube * lam[a];
                }
            }
        }
    }
    Ok(b)
}

fn cubic_elem<T: Real>(vals: [T; 4], quad: &Quadrature<T>, vol: T) -> [[T; 4]; 4] {
    let three = T::of(3.0);
    let mut elem = [[T::zero(); 4]; 4];
    for (lam, &w) in quad.points().iter().zip(quad.weights()) {
        let v = lam[0] * vals[0] + lam[1] * vals[1] + lam[2] * vals[2] + lam[3] * vals[3];
        let density = three * v * v * w * vol;
        for a in 0..4 {
            let da = density * lam[a];
            for b in 0..4 {
                elem[a][b] += da * lam[b];
            }
        }
    }
    elem
}

/// Jacobian of [`cubic_load`]: the weighted mass matrix with density 3 u^2.
/// Symmetric positive semidefinite; shares the mass matrix pattern.
pub fn cubic_jacobian<T: Real>(u: &FeFunction<T>, quad: &Quadrature<T>) -> Result<SparseMatrix<T>> {
    let mesh = u.mesh();
    let mut triplets = Vec::with_capacity(mesh.tet_count() * 16);
    for (t, tet) in mesh.tets().iter().enumerate() {
        let p = tet_coords(mesh, tet);
        let vol = checked_volume(&p, t)?;
        let elem = cubic_elem(gather(u, tet), quad, vol);
        for a in 0..4 {
            let Some(i) = mesh.dof_of_vertex(tet[a]) else {
                continue;
            };
            for b in 0..4 {
                let Some(j) = mesh.dof_of_vertex(tet[b]) else {
                    continue;
                };
                triplets.push((i, j, elem[a][b]));
            }
        }
    }
    SparseMatrix::from_triplets(mesh.dof_count(), triplets)
}

/// Slot in `CUBIC_NO_SLOT` marks element pairs touching boundary vertices.
pub const CUBIC_NO_SLOT: u32 = u32::MAX;

/// Precomputes, per tet, where each local (a, b) pair lands in the value
/// array of a matrix with the mass pattern. Lets the Newton loop rebuild the
/// Jacobian without re-sorting triplets every iteration.
pub fn cubic_scatter_map<T: Real>(
    mesh: &Mesh<T>,
    pattern: &SparseMatrix<T>,
) -> Result<Vec<[u32; 16]>> {
    if pattern.dim() != mesh.dof_count() {
        return Err(Error::DimensionMismatch {
            expected: mesh.dof_count(),
            got: pattern.dim(),
        });
    }
    let mut map = Vec::with_capacity(mesh.tet_count());
    for tet in mesh.tets() {
        let mut slots = [CUBIC_NO_SLOT; 16];
        for a in 0..4 {
            let Some(i) = mesh.dof_of_vertex(tet[a]) else {
                continue;
            };
            for b in 0..4 {
                let Some(j) = mesh.dof_of_vertex(tet[b]) else {
                    continue;
                };
                let Some(k) = pattern.entry_index(i, j) else {
                    return Err(Error::InvalidConfig(format!(
                        "pattern is missing the coupling ({i}, {j})"
                    )));
                };
                slots[4 * a + b] = u32::try_from(k).map_err(|_| {
                    Error::InvalidConfig("matrix too large for scatter map".into())
                })?;
            }
        }
        map.push(slots);
    }
    Ok(map)
}

/// Adds `scale` times the cubic Jacobian at `u` into `out` through a scatter
/// map built by [`cubic_scatter_map`] for `out`'s pattern.
pub fn add_cubic_jacobian_scaled<T: Real>(
    u: &FeFunction<T>,
    quad: &Quadrature<T>,
    scale: T,
    scatter: &[[u32; 16]],
    out: &mut SparseMatrix<T>,
) -> Result<()> {
    let mesh = u.mesh();
    if scatter.len() != mesh.tet_count() {
        return Err(Error::DimensionMismatch {
            expected: mesh.tet_count(),
            got: scatter.len(),
        });
    }
    let values = out.values_mut();
    for (t, tet) in mesh.tets().iter().enumerate() {
        let p = tet_coords(mesh, tet);
        let vol = checked_volume(&p, t)?;
        let elem = cubic_elem(gather(u, tet), quad, vol);
        let slots = &scatter[t];
        for a in 0..4 {
            for b in 0..4 {
                let k = slots[4 * a + b];
                if k != CUBIC_NO_SLOT {
                    values[k as usize] += scale * elem[a][b];
                }
            }
        }
    }
    Ok(())
}

/// Discrete Laplacian applied through the weak form: solves M z = -A u.
pub fn apply_discrete_laplacian<T: Real>(
    u: &FeFunction<T>,
    mass: &SparseMatrix<T>,
    stiffness: &SparseMatrix<T>,
    solver: &SolverConfig<T>,
) -> Result<FeFunction<T>> {
    let au = stiffness.mul_vec_alloc(u.coeffs());
    let b: Vec<T> = au.into_iter().map(|v| -v).collect();
    let z = cg_solve(mass, &b, solver)?;
    Ok(FeFunction::from_raw(u.mesh().clone(), z))
}
