//! Structured Kuhn meshes of the unit cube.
//!
//! The cube is split into n^3 cells and each cell into the six Kuhn
//! tetrahedra sharing the cell's main diagonal. This family is closed under
//! dyadic refinement: every tetrahedron of the mesh with 2n subdivisions is
//! contained in exactly one tetrahedron of the mesh with n subdivisions, so
//! the P1 spaces nest exactly and prolongation is pointwise evaluation.
//!
//! Vertices are ordered lexicographically by (ix, iy, iz); interior vertices
//! (all grid indices strictly between 0 and n) carry the degrees of freedom,
//! in the same lexicographic order. Homogeneous Dirichlet data is implicit:
//! boundary vertices have no dof and evaluate to zero.

use std::io::{self, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::FeFunction;
use crate::scalar::Real;

/// Vertex permutations generating the six Kuhn tetrahedra of a cell, with a
/// parity flag marking the ones whose natural vertex order is negatively
/// oriented (fixed by swapping the last two vertices).
const KUHN_PERMS: [([usize; 3], bool); 6] = [
    ([0, 1, 2], false),
    ([0, 2, 1], true),
    ([1, 0, 2], true),
    ([1, 2, 0], false),
    ([2, 0, 1], false),
    ([2, 1, 0], true),
];

/// Largest supported subdivision count, a memory guard.
const MAX_N: u32 = 512;

/// Tetrahedral mesh of the unit cube with homogeneous Dirichlet dofs.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh<T> {
    pub(crate) n: u32,
    pub(crate) vertices: Vec<[T; 3]>,
    pub(crate) tets: Vec<[usize; 4]>,
    pub(crate) dof_of_vertex: Vec<Option<usize>>,
    pub(crate) vertex_of_dof: Vec<usize>,
}

/// Builds the Kuhn mesh with `n` subdivisions per axis.
pub fn build_structured_mesh<T: Real>(n: u32) -> Result<Arc<Mesh<T>>> {
    if n == 0 {
        return Err(Error::EmptyMesh);
    }
    if n > MAX_N {
        return Err(Error::InvalidConfig(format!(
            "n={n} exceeds the supported maximum {MAX_N}"
        )));
    }
    let np = (n + 1) as usize;
    let nu = n as usize;
    let inv_n = T::one() / T::of_usize(nu);

    let mut vertices = Vec::with_capacity(np * np * np);
    let mut dof_of_vertex = Vec::with_capacity(np * np * np);
    let mut vertex_of_dof = Vec::new();
    for ix in 0..np {
        for iy in 0..np {
            for iz in 0..np {
                vertices.push([
                    T::of_usize(ix) * inv_n,
                    T::of_usize(iy) * inv_n,
                    T::of_usize(iz) * inv_n,
                ]);
                let interior = (1..nu).contains(&ix) && (1..nu).contains(&iy) && (1..nu).contains(&iz);
                if interior {
                    dof_of_vertex.push(Some(vertex_of_dof.len()));
                    vertex_of_dof.push(vertices.len() - 1);
                } else {
                    dof_of_vertex.push(None);
                }
            }
        }
    }

    let vid = |g: [usize; 3]| (g[0] * np + g[1]) * np + g[2];
    let mut tets = Vec::with_capacity(6 * nu * nu * nu);
    for cx in 0..nu {
        for cy in 0..nu {
            for cz in 0..nu {
                let c = [cx, cy, cz];
                for (perm, swap) in KUHN_PERMS {
                    let mut g = c;
                    let v0 = vid(g);
                    g[perm[0]] += 1;
                    let v1 = vid(g);
                    g[perm[1]] += 1;
                    let v2 = vid(g);
                    let v3 = vid([cx + 1, cy + 1, cz + 1]);
                    let tet = if swap {
                        [v0, v1, v3, v2]
                    } else {
                        [v0, v1, v2, v3]
                    };
                    tets.push(tet);
                }
            }
        }
    }

    Ok(Arc::new(Mesh {
        n,
        vertices,
        tets,
        dof_of_vertex,
        vertex_of_dof,
    }))
}

impl<T: Real> Mesh<T> {
    pub fn n(&self) -> u32 {
        self.n
    }

    /// Mesh size, the diameter sqrt(3)/n of the cells' tetrahedra.
    pub fn h(&self) -> T {
        Self::h_of(self.n)
    }

    /// Mesh size for a given subdivision count without building the mesh.
    pub fn h_of(n: u32) -> T {
        T::of(3.0).sqrt() / T::of(f64::from(n))
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn tet_count(&self) -> usize {
        self.tets.len()
    }

    /// Number of interior degrees of freedom, (n-1)^3.
    pub fn dof_count(&self) -> usize {
        self.vertex_of_dof.len()
    }

    pub fn vertex(&self, v: usize) -> [T; 3] {
        self.vertices[v]
    }

    pub fn tets(&self) -> &[[usize; 4]] {
        &self.tets
    }

    pub fn dof_of_vertex(&self, v: usize) -> Option<usize> {
        self.dof_of_vertex[v]
    }

    pub fn vertex_of_dof(&self, dof: usize) -> usize {
        self.vertex_of_dof[dof]
    }

    /// Grid indices (ix, iy, iz) of a vertex id.
    pub fn grid_coords(&self, v: usize) -> [usize; 3] {
        let np = (self.n + 1) as usize;
        [v / (np * np), (v / np) % np, v % np]
    }

    /// Evaluates the P1 function with the given interior coefficients
    /// (boundary values zero) at a point of the closed unit cube.
    pub fn eval_dofs(&self, coeffs: &[T], x: [T; 3]) -> T {
        assert_eq!(coeffs.len(), self.dof_count());
        let nu = self.n as usize;
        let nf = T::of_usize(nu);
        let mut cell = [0usize; 3];
        let mut xi = [T::zero(); 3];
        for c in 0..3 {
            let scaled = x[c] * nf;
            let mut ci = scaled.floor().to_f64().unwrap_or(0.0) as isize;
            ci = ci.clamp(0, nu as isize - 1);
            cell[c] = ci as usize;
            let mut t = scaled - T::of_usize(cell[c]);
            if t < T::zero() {
                t = T::zero();
            }
            if t > T::one() {
                t = T::one();
            }
            xi[c] = t;
        }
        self.p1_value(cell, xi, |v| match self.dof_of_vertex[v] {
            Some(d) => coeffs[d],
            None => T::zero(),
        })
    }

    /// Barycentric P1 evaluation inside one cell: local coordinates `xi` are
    /// sorted, which selects the containing Kuhn tetrahedron.
    fn p1_value(&self, cell: [usize; 3], xi: [T; 3], value_at: impl Fn(usize) -> T) -> T {
        let np = (self.n + 1) as usize;
        let vid = |g: [usize; 3]| (g[0] * np + g[1]) * np + g[2];
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| xi[b].partial_cmp(&xi[a]).expect("finite local coordinate"));
        let l0 = T::one() - xi[order[0]];
        let l1 = xi[order[0]] - xi[order[1]];
        let l2 = xi[order[1]] - xi[order[2]];
        let l3 = xi[order[2]];
        let mut g = cell;
        let v0 = vid(g);
        g[order[0]] += 1;
        let v1 = vid(g);
        g[order[1]] += 1;
        let v2 = vid(g);
        let v3 = vid([cell[0] + 1, cell[1] + 1, cell[2] + 1]);
        l0 * value_at(v0) + l1 * value_at(v1) + l2 * value_at(v2) + l3 * value_at(v3)
    }
}

/// Nodal interpolation of a scalar field onto the interior vertices.
pub fn interpolate<T: Real>(
    mesh: &Arc<Mesh<T>>,
    f: impl Fn([T; 3]) -> T,
) -> Result<FeFunction<T>> {
    let mut coeffs = Vec::with_capacity(mesh.dof_count());
    for d in 0..mesh.dof_count() {
        let v = mesh.vertex_of_dof(d);
        let val = f(mesh.vertex(v));
        if !val.is_finite() {
            return Err(Error::NonFiniteSample { vertex: v });
        }
        coeffs.push(val);
    }
    Ok(FeFunction::from_raw(mesh.clone(), coeffs))
}

/// Exact representation of a coarse P1 function on a dyadically refined mesh.
///
/// `fine.n` must be `2^k * coarse.n` for some `k >= 1`. Values at fine
/// vertices are computed from integer grid arithmetic, so coarse vertex
/// values are preserved exactly.
pub fn prolongate<T: Real>(u: &FeFunction<T>, fine: &Arc<Mesh<T>>) -> Result<FeFunction<T>> {
    let coarse = u.mesh();
    let cn = coarse.n() as usize;
    let fnn = fine.n() as usize;
    let nested = fnn > cn && fnn % cn == 0 && (fnn / cn).is_power_of_two();
    if !nested {
        return Err(Error::NotNested {
            coarse: coarse.n(),
            fine: fine.n(),
        });
    }
    let coeffs_in = u.coeffs();
    let value_of_vertex = |v: usize| match coarse.dof_of_vertex(v) {
        Some(d) => coeffs_in[d],
        None => T::zero(),
    };
    let inv_fn = T::one() / T::of_usize(fnn);
    let mut coeffs = Vec::with_capacity(fine.dof_count());
    for d in 0..fine.dof_count() {
        let g = fine.grid_coords(fine.vertex_of_dof(d));
        let mut cell = [0usize; 3];
        let mut xi = [T::zero(); 3];
        for c in 0..3 {
            let scaled = g[c] * cn;
            cell[c] = scaled / fnn;
            let rem = scaled - cell[c] * fnn;
            xi[c] = T::of_usize(rem) * inv_fn;
        }
        coeffs.push(coarse.p1_value(cell, xi, value_of_vertex));
    }
    Ok(FeFunction::from_raw(fine.clone(), coeffs))
}

/// Plain-text mesh dump. Vertex lines are `id,x,y,z`; tet lines are
/// `id,v0,v1,v2,v3`; section headers are `#` comments.
pub fn write_mesh_text<T: Real, W: Write>(mesh: &Mesh<T>, out: &mut W) -> io::Result<()> {
    writeln!(out, "# vertices: id,x,y,z")?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        writeln!(out, "{i},{},{},{}", v[0], v[1], v[2])?;
    }
    writeln!(out, "# tets: id,v0,v1,v2,v3")?;
    for (i, t) in mesh.tets.iter().enumerate() {
        writeln!(out, "{i},{},{},{},{}", t[0], t[1], t[2], t[3])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn signed_volume(p: &[[f64; 3]; 4]) -> f64 {
        let e = |a: usize, c: usize| p[a][c] - p[0][c];
        let det = e(1, 0) * (e(2, 1) * e(3, 2) - e(2, 2) * e(3, 1))
            - e(1, 1) * (e(2, 0) * e(3, 2) - e(2, 2) * e(3, 0))
            + e(1, 2) * (e(2, 0) * e(3, 1) - e(2, 1) * e(3, 0));
        det / 6.0
    }

    #[test]
    fn counts_match_formulas() {
        let m1 = build_structured_mesh::<f64>(1).unwrap();
        assert_eq!(m1.vertex_count(), 8);
        assert_eq!(m1.tet_count(), 6);
        assert_eq!(m1.dof_count(), 0);

        let m2 = build_structured_mesh::<f64>(2).unwrap();
        assert_eq!(m2.vertex_count(), 27);
        assert_eq!(m2.tet_count(), 48);
        assert_eq!(m2.dof_count(), 1);
        let center = m2.vertex(m2.vertex_of_dof(0));
        assert_eq!(center, [0.5, 0.5, 0.5]);

        let m3 = build_structured_mesh::<f64>(3).unwrap();
        assert_eq!(m3.vertex_count(), 64);
        assert_eq!(m3.tet_count(), 162);
        assert_eq!(m3.dof_count(), 8);
    }

    #[test]
    fn rejects_zero_subdivisions() {
        assert!(matches!(
            build_structured_mesh::<f64>(0),
            Err(Error::EmptyMesh)
        ));
    }

    #[test]
    fn mesh_size_is_cell_diagonal() {
        let m = build_structured_mesh::<f64>(2).unwrap();
        assert!((m.h() - 3f64.sqrt() / 2.0).abs() <= 1e-15);
    }

    #[test]
    fn tet_volumes_positive_and_sum_to_one() {
        for n in [1u32, 2, 4] {
            let m = build_structured_mesh::<f64>(n).unwrap();
            let mut sum = 0.0;
            for tet in m.tets() {
                let p = [
                    m.vertex(tet[0]),
                    m.vertex(tet[1]),
                    m.vertex(tet[2]),
                    m.vertex(tet[3]),
                ];
                let v = signed_volume(&p);
                assert!(v > 0.0, "n={n} non-positive tet volume {v}");
                sum += v;
            }
            assert!((sum - 1.0).abs() <= 1e-14, "n={n} sum={sum}");
        }
    }

    #[test]
    fn build_is_deterministic() {
        let a = build_structured_mesh::<f64>(4).unwrap();
        let b = build_structured_mesh::<f64>(4).unwrap();
        assert_eq!(*a, *b);
    }

    #[test]
    fn interpolate_zero_field_is_zero() {
        let m = build_structured_mesh::<f64>(4).unwrap();
        let u = interpolate(&m, |_| 0.0).unwrap();
        assert!(u.coeffs().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn interpolate_sin_product_center() {
        let m = build_structured_mesh::<f64>(2).unwrap();
        let pi = std::f64::consts::PI;
        let u = interpolate(&m, |x| (pi * x[0]).sin() * (pi * x[1]).sin() * (pi * x[2]).sin())
            .unwrap();
        assert!((u.coeffs()[0] - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn interpolate_rejects_non_finite() {
        let m = build_structured_mesh::<f64>(2).unwrap();
        let e = interpolate(&m, |_| f64::NAN).unwrap_err();
        assert!(matches!(e, Error::NonFiniteSample { .. }));
    }

    #[test]
    fn interpolating_own_evaluation_is_identity() {
        let m = build_structured_mesh::<f64>(4).unwrap();
        let u = interpolate(&m, |x| (x[0] - 0.3) * x[1] + x[2] * x[2]).unwrap();
        let w = interpolate(&m, |x| u.eval(x)).unwrap();
        assert_eq!(u.coeffs(), w.coeffs());
    }

    #[test]
    fn prolongate_zero_is_zero() {
        let c = build_structured_mesh::<f64>(2).unwrap();
        let f = build_structured_mesh::<f64>(4).unwrap();
        let u = interpolate(&c, |_| 0.0).unwrap();
        let p = prolongate(&u, &f).unwrap();
        assert!(p.coeffs().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prolongate_preserves_coarse_node_values() {
        let c = build_structured_mesh::<f64>(4).unwrap();
        let f = build_structured_mesh::<f64>(8).unwrap();
        let u = interpolate(&c, |x| x[0] + 2.0 * x[1] * x[2]).unwrap();
        let p = prolongate(&u, &f).unwrap();
        for d in 0..c.dof_count() {
            let g = c.grid_coords(c.vertex_of_dof(d));
            let fine_vertex = ((2 * g[0]) * 9 + 2 * g[1]) * 9 + 2 * g[2];
            let fd = f.dof_of_vertex(fine_vertex).expect("interior stays interior");
            assert_eq!(p.coeffs()[fd], u.coeffs()[d]);
        }
    }

    #[test]
    fn prolongate_supports_multiple_dyadic_levels() {
        let c = build_structured_mesh::<f64>(2).unwrap();
        let f = build_structured_mesh::<f64>(8).unwrap();
        let u = interpolate(&c, |x| x[0] * x[1] + x[2]).unwrap();
        let p = prolongate(&u, &f).unwrap();
        for &x in &[[0.3, 0.7, 0.2], [0.55, 0.15, 0.95], [0.5, 0.5, 0.5]] {
            assert!((p.eval(x) - u.eval(x)).abs() <= 1e-12);
        }
    }

    #[test]
    fn prolongate_rejects_non_nested_pairs() {
        let c = build_structured_mesh::<f64>(4).unwrap();
        let u = interpolate(&c, |_| 1.0).unwrap();
        for bad in [2u32, 4, 6, 12] {
            let f = build_structured_mesh::<f64>(bad).unwrap();
            assert!(
                matches!(prolongate(&u, &f), Err(Error::NotNested { .. })),
                "fine n={bad} should be rejected"
            );
        }
    }

    #[test]
    fn mesh_dump_has_documented_shape() {
        let m = build_structured_mesh::<f64>(1).unwrap();
        let mut buf = Vec::new();
        write_mesh_text(&*m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# vertices: id,x,y,z");
        assert_eq!(lines.len(), 2 + 8 + 6);
        assert_eq!(lines[1], "0,0,0,0");
        assert!(lines[10].starts_with("0,"));
        assert_eq!(lines[10].split(',').count(), 5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        // Nested-space agreement: prolongation changes the basis, not the function.
        #[test]
        fn prolongation_agrees_pointwise(
            coeffs in prop::collection::vec(-1.0f64..1.0, 27),
            pts in prop::collection::vec(prop::array::uniform3(0.0f64..1.0), 16),
        ) {
            let c = build_structured_mesh::<f64>(4).unwrap();
            let f = build_structured_mesh::<f64>(8).unwrap();
            let u = FeFunction::from_coeffs(c.clone(), coeffs).unwrap();
            let p = prolongate(&u, &f).unwrap();
            for x in pts {
                let a = u.eval(x);
                let b = p.eval(x);
                prop_assert!((a - b).abs() <= 1e-12, "x={:?} coarse={} fine={}", x, a, b);
            }
        }
    }
}
