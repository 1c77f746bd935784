//! Independent reference computations used by the test suites.
//!
//! Everything here deliberately avoids the fast path it is used to check:
//! integrals come from a Grundmann-Moeller construction instead of the fixed
//! element rules, linear solves for small systems use dense Cholesky, and
//! eigenpairs come from inverse power iteration. Kept `f64`-only; tests run
//! in `f64`.

use crate::linalg::{cg_solve, SolverConfig, SparseMatrix};
use crate::mesh::Mesh;

/// Bisection root finder; `None` if the bracket does not change sign.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// Grundmann-Moeller rule of index `s` (polynomial degree `2s+1`) on the
/// reference tetrahedron. Returns barycentric points and weights normalized
/// so the weights sum to one; some weights are negative for `s >= 1`.
pub fn grundmann_moeller(s: usize) -> (Vec<[f64; 4]>, Vec<f64>) {
    let d = 2 * s + 1;
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for i in 0..=s {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let denom_pow = (d + 3 - 2 * i) as f64;
        let w = sign * 0.25f64.powi(s as i32) * denom_pow.powi(d as i32)
            / (factorial(i) * factorial(d + 3 - i));
        let m = s - i;
        for k0 in 0..=m {
            for k1 in 0..=(m - k0) {
                for k2 in 0..=(m - k0 - k1) {
                    let k3 = m - k0 - k1 - k2;
                    let denom = (d + 3 - 2 * i) as f64;
                    points.push([
                        (2 * k0 + 1) as f64 / denom,
                        (2 * k1 + 1) as f64 / denom,
                        (2 * k2 + 1) as f64 / denom,
                        (2 * k3 + 1) as f64 / denom,
                    ]);
                    // Normalize by the reference volume 1/6.
                    weights.push(6.0 * w);
                }
            }
        }
    }
    (points, weights)
}

/// Exact value of the volume-normalized barycentric monomial integral,
/// `(1/V) * integral of l0^a l1^b l2^c l3^d` over a tetrahedron.
pub fn barycentric_monomial_integral(alpha: [usize; 4]) -> f64 {
    let total: usize = alpha.iter().sum();
    let num: f64 = alpha.iter().map(|&a| factorial(a)).product();
    6.0 * num / factorial(total + 3)
}

/// Integral of `g` over the whole mesh with the Grundmann-Moeller rule.
pub fn integral_oracle(mesh: &Mesh<f64>, s: usize, g: impl Fn([f64; 3]) -> f64) -> f64 {
    let (pts, wts) = grundmann_moeller(s);
    let mut acc = 0.0;
    for tet in mesh.tets() {
        let p: Vec<[f64; 3]> = tet.iter().map(|&v| mesh.vertex(v)).collect();
        let vol = tet_volume(&p);
        for (lam, &w) in pts.iter().zip(&wts) {
            let x = phys_point(&p, lam);
            acc += w * vol * g(x);
        }
    }
    acc
}

/// Load vector b_i = integral of `g * phi_i` over interior basis functions,
/// computed with the Grundmann-Moeller rule.
pub fn load_oracle(mesh: &Mesh<f64>, s: usize, g: impl Fn([f64; 3]) -> f64) -> Vec<f64> {
    let (pts, wts) = grundmann_moeller(s);
    let mut b = vec![0.0; mesh.dof_count()];
    for tet in mesh.tets() {
        let p: Vec<[f64; 3]> = tet.iter().map(|&v| mesh.vertex(v)).collect();
        let vol = tet_volume(&p);
        for (lam, &w) in pts.iter().zip(&wts) {
            let x = phys_point(&p, lam);
            let gv = g(x);
            for (a, &v) in tet.iter().enumerate() {
                if let Some(dof) = mesh.dof_of_vertex(v) {
                    b[dof] += w * vol * gv * lam[a];
                }
            }
        }
    }
    b
}

fn phys_point(p: &[[f64; 3]], lam: &[f64; 4]) -> [f64; 3] {
    let mut x = [0.0; 3];
    for (a, pa) in p.iter().enumerate() {
        for c in 0..3 {
            x[c] += lam[a] * pa[c];
        }
    }
    x
}

fn tet_volume(p: &[[f64; 3]]) -> f64 {
    let e1: Vec<f64> = (0..3).map(|c| p[1][c] - p[0][c]).collect();
    let e2: Vec<f64> = (0..3).map(|c| p[2][c] - p[0][c]).collect();
    let e3: Vec<f64> = (0..3).map(|c| p[3][c] - p[0][c]).collect();
    let det = e1[0] * (e2[1] * e3[2] - e2[2] * e3[1]) - e1[1] * (e2[0] * e3[2] - e2[2] * e3[0])
        + e1[2] * (e2[0] * e3[1] - e2[1] * e3[0]);
    det / 6.0
}

/// Dense symmetric matrix, row-major.
pub struct DenseMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

pub fn to_dense(a: &SparseMatrix<f64>) -> DenseMatrix {
    let n = a.dim();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            data[i * n + j] = a.value_at(i, j);
        }
    }
    DenseMatrix { n, data }
}

/// Cholesky solve for SPD dense systems; `None` if a pivot fails.
pub fn cholesky_solve(a: &DenseMatrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.n;
    let mut l = a.data.clone();
    for j in 0..n {
        let mut d = l[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= 0.0 {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let mut v = l[i * n + j];
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = v / d;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            let lik = l[i * n + k];
            y[i] -= lik * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let lki = l[k * n + i];
            y[i] -= lki * y[k];
        }
        y[i] /= l[i * n + i];
    }
    Some(y)
}

/// Smallest generalized eigenpair of A v = mu M v via inverse power
/// iteration; the eigenvector is returned M-normalized. Dense Cholesky is
/// used up to 1500 dofs, conjugate gradients above.
pub fn smallest_eigenpair(a: &SparseMatrix<f64>, m: &SparseMatrix<f64>) -> (f64, Vec<f64>) {
    let n = a.dim();
    assert_eq!(m.dim(), n);
    let dense = if n <= 1500 { Some(to_dense(a)) } else { None };
    let tight = SolverConfig::<f64> {
        cg_rel_tol: 1e-13,
        cg_max_iter: Some(20 * n + 200),
        ..SolverConfig::default()
    };
    let mut v = vec![1.0; n];
    normalize_m(m, &mut v);
    let mut mu = 0.0;
    for _ in 0..200 {
        let mv = m.mul_vec_alloc(&v);
        let w = match &dense {
            Some(d) => cholesky_solve(d, &mv).expect("stiffness must be SPD"),
            None => cg_solve(a, &mv, &tight).expect("cg must converge for eigen oracle"),
        };
        v = w;
        normalize_m(m, &mut v);
        let av = a.mul_vec_alloc(&v);
        let mv = m.mul_vec_alloc(&v);
        mu = dot(&v, &av) / dot(&v, &mv);
        // Residual in the euclidean norm relative to |A v|.
        let res: f64 = av
            .iter()
            .zip(&mv)
            .map(|(ai, mi)| (ai - mu * mi) * (ai - mu * mi))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        if res <= 1e-12 * scale {
            break;
        }
    }
    (mu, v)
}

fn normalize_m(m: &SparseMatrix<f64>, v: &mut [f64]) {
    let mv = m.mul_vec_alloc(v);
    let norm = dot(v, &mv).sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
