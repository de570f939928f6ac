//! State and adjoint solves with the interpolated operator.
//!
//! The default direct method factors the symmetric Toeplitz matrix through
//! the Levinson recursion and applies the inverse in Gohberg–Semencul form,
//! followed by iterative refinement. The last factorization is kept so that
//! the adjoint solve at the same parameter reuses it.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::assembly::{ParamPoint, StiffnessMatrix};
use crate::error::{Error, Result};
use crate::mesh::FieldVector;
use crate::opfamily::OperatorFamily;
use crate::toeplitz::{norm2, DenseCholesky, SymToeplitz, ToeplitzInverse, ToeplitzOperator};

pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_REFINEMENTS: usize = 8;
// residuals below this multiple of the rounding level of `|A| |u|` are accepted
const ROUNDING_SLACK: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    /// Levinson / Gohberg–Semencul with iterative refinement.
    Direct,
    /// Jacobi-preconditioned conjugate gradients.
    Cg,
    /// Dense Cholesky; for small systems and cross-checks.
    Dense,
}

impl std::str::FromStr for SolverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(SolverKind::Direct),
            "cg" => Ok(SolverKind::Cg),
            "dense" => Ok(SolverKind::Dense),
            other => Err(Error::Config(format!("unknown solver '{other}'"))),
        }
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolverKind::Direct => "direct",
            SolverKind::Cg => "cg",
            SolverKind::Dense => "dense",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: FieldVector,
    /// Relative residual `‖A u − b‖ / ‖b‖` (zero for `b = 0`).
    pub residual_norm: f64,
    pub method: SolverKind,
    /// Refinement steps (direct) or CG iterations.
    pub iterations: usize,
}

enum Inverse {
    Toeplitz(ToeplitzInverse),
    Dense(DenseCholesky),
    None,
}

/// A matrix prepared for repeated solves.
pub struct Factorization {
    pub matrix: StiffnessMatrix,
    op: ToeplitzOperator,
    abs_op: ToeplitzOperator,
    inverse: Inverse,
}

impl Factorization {
    pub fn new(matrix: StiffnessMatrix, kind: SolverKind) -> Result<Self> {
        let t = &matrix.entries;
        if !(t.col()[0] > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "diagonal {}",
                t.col()[0]
            )));
        }
        let inverse = match kind {
            SolverKind::Direct => Inverse::Toeplitz(ToeplitzInverse::new(t)?),
            SolverKind::Dense => Inverse::Dense(DenseCholesky::factor(&t.to_dense())?),
            SolverKind::Cg => Inverse::None,
        };
        let op = ToeplitzOperator::new(t);
        let abs_op =
            ToeplitzOperator::new(&SymToeplitz::new(t.col().iter().map(|v| v.abs()).collect()));
        Ok(Factorization {
            matrix,
            op,
            abs_op,
            inverse,
        })
    }

    fn residual(&self, u: &[f64], b: &[f64]) -> Vec<f64> {
        let au = self.op.apply(u);
        b.iter().zip(&au).map(|(x, y)| x - y).collect()
    }

    // accepted residual: the requested tolerance or the rounding floor
    fn target(&self, u: &[f64], b_norm: f64, tol: f64) -> f64 {
        let abs_u: Vec<f64> = u.iter().map(|v| v.abs()).collect();
        let floor = ROUNDING_SLACK * f64::EPSILON * norm2(&self.abs_op.apply(&abs_u));
        (tol * b_norm).max(floor)
    }

    /// Solves `A u = b` to relative residual `tol`.
    pub fn solve(&self, b: &[f64], tol: f64, kind: SolverKind) -> Result<(Vec<f64>, f64, usize)> {
        let n = self.matrix.n();
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: b.len(),
            });
        }
        let b_norm = norm2(b);
        if b_norm == 0.0 {
            return Ok((vec![0.0; n], 0.0, 0));
        }
        match (&self.inverse, kind) {
            (Inverse::None, _) | (_, SolverKind::Cg) => self.cg(b, b_norm, tol),
            (inv, _) => {
                let apply = |r: &[f64]| match inv {
                    Inverse::Toeplitz(t) => t.apply(r),
                    Inverse::Dense(c) => c.solve(r),
                    Inverse::None => unreachable!(),
                };
                let mut u = apply(b);
                let mut r = self.residual(&u, b);
                let mut rn = norm2(&r);
                let mut steps = 0;
                while rn > self.target(&u, b_norm, tol) {
                    if steps == MAX_REFINEMENTS {
                        return Err(Error::SolverStalled {
                            iterations: steps,
                            residual: rn / b_norm,
                        });
                    }
                    let du = apply(&r);
                    for (x, d) in u.iter_mut().zip(&du) {
                        *x += d;
                    }
                    r = self.residual(&u, b);
                    rn = norm2(&r);
                    steps += 1;
                }
                Ok((u, rn / b_norm, steps))
            }
        }
    }

    fn cg(&self, b: &[f64], b_norm: f64, tol: f64) -> Result<(Vec<f64>, f64, usize)> {
        let n = b.len();
        // Jacobi preconditioner; the diagonal of a Toeplitz matrix is constant
        let inv_diag = 1.0 / self.matrix.entries.col()[0];
        let mut u = vec![0.0; n];
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().map(|v| v * inv_diag).collect();
        let mut p = z.clone();
        let mut rz: f64 = crate::toeplitz::dot(&r, &z);
        let max_iter = 20 * n + 100;
        for it in 1..=max_iter {
            let ap = self.op.apply(&p);
            let pap = crate::toeplitz::dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::NotPositiveDefinite(format!("CG curvature {pap:e}")));
            }
            let alpha = rz / pap;
            for i in 0..n {
                u[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if it % 50 == 0 {
                // recompute to avoid drift of the recursive residual
                r = self.residual(&u, b);
            }
            let rn = norm2(&r);
            if rn <= self.target(&u, b_norm, tol) {
                let true_r = norm2(&self.residual(&u, b));
                if true_r <= self.target(&u, b_norm, tol) {
                    return Ok((u, true_r / b_norm, it));
                }
                r = self.residual(&u, b);
            }
            z = r.iter().map(|v| v * inv_diag).collect();
            let rz_new = crate::toeplitz::dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let rn = norm2(&self.residual(&u, b));
        Err(Error::SolverStalled {
            iterations: max_iter,
            residual: rn / b_norm,
        })
    }
}

/// Solver with a one-entry factorization cache keyed by the exact parameter.
pub struct Solver {
    pub kind: SolverKind,
    pub tol: f64,
    last: Mutex<Option<(u64, u64, Arc<Factorization>)>>,
    factorizations: AtomicUsize,
}

impl Solver {
    pub fn new(kind: SolverKind, tol: f64) -> Self {
        Solver {
            kind,
            tol,
            last: Mutex::new(None),
            factorizations: AtomicUsize::new(0),
        }
    }

    /// Number of factorizations computed so far.
    pub fn factorizations(&self) -> usize {
        self.factorizations.load(Ordering::Relaxed)
    }

    pub fn factor(&self, family: &OperatorFamily, q: ParamPoint) -> Result<Arc<Factorization>> {
        let key = (q.s.to_bits(), q.delta.to_bits());
        if let Some((s, d, f)) = self.last.lock().unwrap().as_ref() {
            if (*s, *d) == key {
                return Ok(f.clone());
            }
        }
        let f = Arc::new(Factorization::new(family.evaluate(q)?, self.kind)?);
        self.factorizations.fetch_add(1, Ordering::Relaxed);
        *self.last.lock().unwrap() = Some((key.0, key.1, f.clone()));
        Ok(f)
    }

    fn report(&self, family: &OperatorFamily, q: ParamPoint, rhs: &[f64]) -> Result<SolveReport> {
        let f = self.factor(family, q)?;
        let (u, res, it) = f.solve(rhs, self.tol, self.kind)?;
        Ok(SolveReport {
            solution: FieldVector::new(family.mesh.clone(), u)?,
            residual_norm: res,
            method: self.kind,
            iterations: it,
        })
    }

    /// `Ã(q) u = f`.
    pub fn solve_state(
        &self,
        family: &OperatorFamily,
        q: ParamPoint,
        f: &[f64],
    ) -> Result<SolveReport> {
        self.report(family, q, f)
    }

    /// `Ã(q) z = M (u_h − u_d)`; `Ã` is symmetric, so the state factorization
    /// is reused.
    pub fn solve_adjoint(
        &self,
        family: &OperatorFamily,
        q: ParamPoint,
        u_h: &[f64],
        u_d: &[f64],
    ) -> Result<SolveReport> {
        if u_h.len() != u_d.len() {
            return Err(Error::DimensionMismatch {
                expected: u_h.len(),
                got: u_d.len(),
            });
        }
        let diff: Vec<f64> = u_h.iter().zip(u_d).map(|(a, b)| a - b).collect();
        let rhs = family.mass.matvec(&diff);
        self.report(family, q, &rhs)
    }
}

impl Default for Solver {
    fn default() -> Self {
        Solver::new(SolverKind::Direct, DEFAULT_TOL)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::QuadratureConfig;
    use crate::cheb::build_schedule;
    use crate::mesh::{build_mesh, load_vector};
    use crate::opfamily::KernelScaling;
    use crate::toeplitz::dot;

    fn family(n_elem: usize, scaling: KernelScaling) -> OperatorFamily {
        let mesh = Arc::new(build_mesh(-1.0, 1.0, n_elem).unwrap());
        let sched = build_schedule((0.1, 0.9), f64::INFINITY, 1e-8, 0.3).unwrap();
        OperatorFamily::precompute(mesh, sched, QuadratureConfig::default(), scaling).unwrap()
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let f = family(16, KernelScaling::Half);
        let q = ParamPoint::new(0.5, 0.8).unwrap();
        let r = Solver::default().solve_state(&f, q, &[0.0; 15]).unwrap();
        assert!(r.solution.coeffs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn methods_agree() {
        let f = family(128, KernelScaling::Half);
        let q = ParamPoint::new(0.7, 0.6).unwrap();
        let b = load_vector(&f.mesh, |x| 1.0 + x);
        let a = f.evaluate(q).unwrap();
        let mut sols = Vec::new();
        for kind in [SolverKind::Direct, SolverKind::Cg, SolverKind::Dense] {
            let r = Solver::new(kind, 1e-10).solve_state(&f, q, &b).unwrap();
            assert!(r.residual_norm <= 1e-10);
            sols.push(r.solution.coeffs);
        }
        for other in &sols[1..] {
            let d: Vec<f64> = sols[0].iter().zip(other).map(|(x, y)| x - y).collect();
            let e =
                a.entries.bilinear(&d, &d).sqrt() / a.entries.bilinear(&sols[0], &sols[0]).sqrt();
            assert!(e < 1e-8);
        }
    }

    #[test]
    fn getoor_center_value() {
        // u_ex(0) = 1 for s = 1/2 with the fractional Laplacian scaling
        let f = family(512, KernelScaling::FractionalLaplacian);
        let q = ParamPoint::infinite(0.5).unwrap();
        let b = load_vector(&f.mesh, |_| 1.0);
        let u = Solver::default().solve_state(&f, q, &b).unwrap().solution;
        assert!((u.eval(0.0) - 1.0).abs() < 1e-2, "{}", u.eval(0.0));
    }

    #[test]
    fn galerkin_energy_identity_and_reuse() {
        let f = family(64, KernelScaling::Half);
        let q = ParamPoint::new(0.4, 1.1).unwrap();
        let b = load_vector(&f.mesh, |_| 1.0);
        let solver = Solver::default();
        let u = solver.solve_state(&f, q, &b).unwrap().solution.coeffs;
        let a = f.evaluate(q).unwrap();
        let energy = a.entries.bilinear(&u, &u);
        assert!((energy - dot(&b, &u)).abs() < 1e-10 * energy);

        let u_d: Vec<f64> = u.iter().map(|v| 0.9 * v).collect();
        let z = solver.solve_adjoint(&f, q, &u, &u_d).unwrap();
        assert_eq!(solver.factorizations(), 1);
        // adjoint residual in every basis direction
        let diff: Vec<f64> = u.iter().zip(&u_d).map(|(x, y)| x - y).collect();
        let rhs = f.mass.matvec(&diff);
        let az = a.entries.matvec(&z.solution.coeffs);
        let scale = norm2(&rhs);
        for (x, y) in az.iter().zip(&rhs) {
            assert!((x - y).abs() <= 1e-10 * scale);
        }
        let zero = solver.solve_adjoint(&f, q, &u, &u).unwrap();
        assert!(zero.solution.coeffs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indefinite_matrix_is_hard_error() {
        let m = StiffnessMatrix {
            entries: SymToeplitz::new(vec![1.0, 2.0, 0.0]),
            param: ParamPoint::new(0.5, 1.0).unwrap(),
            kind: crate::assembly::MatrixKind::Full,
        };
        assert!(matches!(
            Factorization::new(m.clone(), SolverKind::Direct),
            Err(Error::NotPositiveDefinite(_))
        ));
        assert!(Factorization::new(m, SolverKind::Dense).is_err());
    }
}
