//! Uniform P1 meshes of an interval, mass matrix, load vectors and discrete
//! norms. Only interior nodes carry degrees of freedom; functions are
//! extended by zero outside the interval.

use std::sync::Arc;

use crate::assembly::StiffnessMatrix;
use crate::error::{Error, Result};
use crate::quad::gauss_legendre;
use crate::toeplitz::SymToeplitz;

const LOAD_ORDER: usize = 6;
const ERROR_ORDER: usize = 12;
// geometric refinement levels of the two boundary elements in `l2_error`
const BOUNDARY_GRADING: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    pub a: f64,
    pub b: f64,
    pub n_elem: usize,
    pub nodes: Vec<f64>,
    pub h: f64,
    pub interior_dofs: Vec<usize>,
}

impl Mesh1D {
    /// Number of degrees of freedom (interior nodes).
    #[inline]
    pub fn n_dofs(&self) -> usize {
        self.n_elem - 1
    }

    #[inline]
    pub fn diameter(&self) -> f64 {
        self.b - self.a
    }

    /// Coordinate of the `i`-th degree of freedom.
    #[inline]
    pub fn dof_coord(&self, i: usize) -> f64 {
        self.nodes[i + 1]
    }

    /// Nodal interpolant of `f` on the interior nodes.
    pub fn interpolate<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.n_dofs()).map(|i| f(self.dof_coord(i))).collect()
    }

    /// Evaluates the P1 function with interior coefficients `coeffs` at `x`.
    pub fn eval_p1(&self, coeffs: &[f64], x: f64) -> f64 {
        if x <= self.a || x >= self.b {
            return 0.0;
        }
        let t = (x - self.a) / self.h;
        let e = (t.floor() as usize).min(self.n_elem - 1);
        let lam = t - e as f64;
        let left = self.node_value(coeffs, e);
        let right = self.node_value(coeffs, e + 1);
        (1.0 - lam) * left + lam * right
    }

    #[inline]
    fn node_value(&self, coeffs: &[f64], node: usize) -> f64 {
        if node == 0 || node == self.n_elem {
            0.0
        } else {
            coeffs[node - 1]
        }
    }
}

/// Coefficients of a P1 function on a mesh (interior nodes only).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldVector {
    pub coeffs: Vec<f64>,
    pub mesh: Arc<Mesh1D>,
}

impl FieldVector {
    pub fn new(mesh: Arc<Mesh1D>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != mesh.n_dofs() {
            return Err(Error::DimensionMismatch {
                expected: mesh.n_dofs(),
                got: coeffs.len(),
            });
        }
        Ok(FieldVector { coeffs, mesh })
    }

    pub fn zeros(mesh: Arc<Mesh1D>) -> Self {
        let n = mesh.n_dofs();
        FieldVector {
            coeffs: vec![0.0; n],
            mesh,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.mesh.eval_p1(&self.coeffs, x)
    }
}

pub fn build_mesh(a: f64, b: f64, n_elem: usize) -> Result<Mesh1D> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidMesh(format!("need a < b, got [{a}, {b}]")));
    }
    if n_elem < 2 {
        return Err(Error::InvalidMesh(format!(
            "need at least 2 elements, got {n_elem}"
        )));
    }
    let h = (b - a) / n_elem as f64;
    let mut nodes: Vec<f64> = (0..=n_elem).map(|i| a + i as f64 * h).collect();
    nodes[n_elem] = b;
    Ok(Mesh1D {
        a,
        b,
        n_elem,
        nodes,
        h,
        interior_dofs: (1..n_elem).collect(),
    })
}

/// P1 mass matrix on the interior nodes, rows `h/6 [1, 4, 1]`.
pub fn mass_matrix(mesh: &Mesh1D) -> SymToeplitz {
    let mut col = vec![0.0; mesh.n_dofs()];
    col[0] = 2.0 * mesh.h / 3.0;
    if col.len() > 1 {
        col[1] = mesh.h / 6.0;
    }
    SymToeplitz::new(col)
}

/// Entries `(f, φ_i)` by per-element Gauss quadrature.
pub fn load_vector<F: Fn(f64) -> f64>(mesh: &Mesh1D, f: F) -> Vec<f64> {
    let rule = gauss_legendre(LOAD_ORDER);
    let h = mesh.h;
    let mut out = vec![0.0; mesh.n_dofs()];
    for e in 0..mesh.n_elem {
        let x0 = mesh.nodes[e];
        let x1 = mesh.nodes[e + 1];
        // hat rising on e belongs to node e+1, falling hat to node e
        let rise = rule.integrate(x0, x1, |x| f(x) * (x - x0) / h);
        let fall = rule.integrate(x0, x1, |x| f(x) * (x1 - x) / h);
        if e + 1 < mesh.n_elem {
            out[e] += rise;
        }
        if e > 0 {
            out[e - 1] += fall;
        }
    }
    out
}

/// `‖u_h − u_exact‖_{L²}` by per-element Gauss quadrature. The two boundary
/// elements are refined geometrically toward the endpoints, where exact
/// solutions typically have unbounded derivatives.
pub fn l2_error<F: Fn(f64) -> f64>(u_h: &FieldVector, u_exact: F) -> f64 {
    let mesh = &u_h.mesh;
    let rule = gauss_legendre(ERROR_ORDER);
    let sq = |x: f64| {
        let d = u_h.eval(x) - u_exact(x);
        d * d
    };
    let mut acc = 0.0;
    for e in 0..mesh.n_elem {
        let x0 = mesh.nodes[e];
        let x1 = mesh.nodes[e + 1];
        if e == 0 {
            acc += graded_toward(x1, x0, rule, &sq);
        } else if e + 1 == mesh.n_elem {
            acc += graded_toward(x0, x1, rule, &sq);
        } else {
            acc += rule.integrate(x0, x1, &sq);
        }
    }
    acc.sqrt()
}

// integral over the segment between `from` and `to`, with pieces halving in
// length toward `to`
fn graded_toward<F: Fn(f64) -> f64>(
    from: f64,
    to: f64,
    rule: &crate::quad::GaussRule,
    f: &F,
) -> f64 {
    let mut acc = 0.0;
    let mut lo = from;
    let mut len = (to - from) / 2.0;
    for _ in 0..BOUNDARY_GRADING {
        let hi = lo + len;
        acc += rule.integrate(lo.min(hi), lo.max(hi), f);
        lo = hi;
        len /= 2.0;
    }
    acc + rule.integrate(lo.min(to), lo.max(to), f)
}

/// `√(vᵀ A v)` for an infinite-horizon stiffness matrix.
pub fn energy_norm(v: &FieldVector, a_inf: &StiffnessMatrix) -> Result<f64> {
    if v.coeffs.len() != a_inf.entries.n() {
        return Err(Error::DimensionMismatch {
            expected: a_inf.entries.n(),
            got: v.coeffs.len(),
        });
    }
    let q = a_inf.entries.bilinear(&v.coeffs, &v.coeffs);
    if q < -1e-12 {
        return Err(Error::NotPositiveDefinite(format!(
            "quadratic form value {q:e}"
        )));
    }
    Ok(q.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_element_mesh() {
        let m = build_mesh(-1.0, 1.0, 4).unwrap();
        assert_eq!(m.nodes, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(m.n_dofs(), 3);
        assert_eq!(m.interior_dofs, vec![1, 2, 3]);
    }

    #[test]
    fn fine_mesh_sizes() {
        let m = build_mesh(-1.0, 1.0, 1 << 12).unwrap();
        assert_eq!(m.h, 2f64.powi(-11));
        assert_eq!(m.n_dofs(), 4095);
        for w in m.nodes.windows(2) {
            assert!(((w[1] - w[0]) - m.h).abs() <= 1e-14 * m.h);
        }
    }

    #[test]
    fn unit_interval_two_elements() {
        let m = build_mesh(0.0, 1.0, 2).unwrap();
        assert_eq!(m.n_dofs(), 1);
        assert_eq!(m.dof_coord(0), 0.5);
        assert_eq!(mass_matrix(&m).col(), &[1.0 / 3.0]);
    }

    #[test]
    fn rejects_degenerate_meshes() {
        assert!(build_mesh(-1.0, 1.0, 1).is_err());
        assert!(build_mesh(1.0, 1.0, 4).is_err());
    }

    #[test]
    fn mass_of_constant_interpolant() {
        // v = 1 on interior nodes: exact integral of v² is L - 2h + 2h/3
        let m = build_mesh(-1.0, 1.0, 64).unwrap();
        let v = vec![1.0; m.n_dofs()];
        let got = mass_matrix(&m).bilinear(&v, &v);
        let exact = 2.0 - 2.0 * m.h + 2.0 * m.h / 3.0;
        assert!((got - exact).abs() < 1e-13);
    }

    #[test]
    fn load_vector_constant_and_odd() {
        let m = build_mesh(-1.0, 1.0, 4).unwrap();
        for v in load_vector(&m, |_| 1.0) {
            assert!((v - 0.5).abs() <= 4.0 * f64::EPSILON);
        }
        let odd = load_vector(&m, |x| x);
        assert!((odd[0] + odd[2]).abs() < 1e-15);
        assert!(odd[1].abs() < 1e-15);
    }

    #[test]
    fn load_vector_quadratic_matches_exact() {
        // (1 - x², φ_i) = h (1 - x_i²) - h³/6 for interior hats
        let m = build_mesh(-1.0, 1.0, 10).unwrap();
        let f = load_vector(&m, |x| 1.0 - x * x);
        for (i, v) in f.iter().enumerate() {
            let x = m.dof_coord(i);
            let exact = m.h * (1.0 - x * x) - m.h.powi(3) / 6.0;
            assert!((v - exact).abs() < 1e-14);
        }
    }

    #[test]
    fn l2_error_cases() {
        let m = Arc::new(build_mesh(-1.0, 1.0, 16).unwrap());
        let coeffs: Vec<f64> = (0..m.n_dofs()).map(|i| (i as f64).sin()).collect();
        let u = FieldVector::new(m.clone(), coeffs).unwrap();
        assert!(l2_error(&u, |x| u.eval(x)) < 1e-13);
        let zero = FieldVector::zeros(m);
        let e = l2_error(&zero, |x: f64| (1.0 - x * x).max(0.0).sqrt());
        assert!((e - (4.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn mass_is_positive(v in prop::collection::vec(-1.0f64..1.0, 31)) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-6));
            let m = build_mesh(-1.0, 1.0, 32).unwrap();
            prop_assert!(mass_matrix(&m).bilinear(&v, &v) > 0.0);
        }

        #[test]
        fn l2_triangle_inequality(u in prop::collection::vec(-1.0f64..1.0, 7),
                                  v in prop::collection::vec(-1.0f64..1.0, 7),
                                  w in prop::collection::vec(-1.0f64..1.0, 7)) {
            let m = Arc::new(build_mesh(-1.0, 1.0, 8).unwrap());
            let fu = FieldVector::new(m.clone(), u).unwrap();
            let fv = FieldVector::new(m.clone(), v).unwrap();
            let fw = FieldVector::new(m.clone(), w).unwrap();
            let uw = l2_error(&fu, |x| fw.eval(x));
            let uv = l2_error(&fu, |x| fv.eval(x));
            let vw = l2_error(&fv, |x| fw.eval(x));
            prop_assert!(uw <= uv + vw + 1e-12);
        }
    }
}
