//! Reduced cost functional, adjoint gradient and BFGS identification of
//! `(s, δ)` (or of `s` alone at a fixed horizon).

use crate::assembly::ParamPoint;
use crate::error::{Error, Result};
use crate::opfamily::OperatorFamily;
use crate::solve::Solver;
use crate::toeplitz::{dot, norm2};

/// Barrier regularization `R(s, δ) = α/(s(1 − s)) + β e^δ/δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularizer {
    pub alpha: f64,
    pub beta: f64,
}

impl Regularizer {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(beta >= 0.0) {
            return Err(Error::Config(format!(
                "need alpha > 0 and beta >= 0, got {alpha}, {beta}"
            )));
        }
        Ok(Regularizer { alpha, beta })
    }

    fn s_term(&self, s: f64) -> f64 {
        self.alpha / (s * (1.0 - s))
    }

    fn delta_term(&self, delta: f64) -> f64 {
        if self.beta == 0.0 {
            0.0
        } else {
            self.beta * delta.exp() / delta
        }
    }

    /// `R(q)`; the `δ` term is dropped for an infinite horizon.
    pub fn value(&self, q: ParamPoint) -> f64 {
        let r = self.s_term(q.s);
        if q.is_infinite() {
            r
        } else {
            r + self.delta_term(q.delta)
        }
    }

    /// `∂R/∂s = α(2s − 1)/(s²(1 − s)²)`.
    pub fn ds(&self, s: f64) -> f64 {
        self.alpha * (2.0 * s - 1.0) / (s * s * (1.0 - s) * (1.0 - s))
    }

    /// `∂R/∂δ = β e^δ (δ − 1)/δ²`.
    pub fn ddelta(&self, delta: f64) -> f64 {
        self.beta * delta.exp() * (delta - 1.0) / (delta * delta)
    }
}

/// Which components of `q` are optimized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Only `s`, at the fixed horizon.
    OrderOnly { delta: f64 },
    /// `s` and `δ` jointly.
    Joint,
}

impl Mode {
    pub fn dim(&self) -> usize {
        match self {
            Mode::OrderOnly { .. } => 1,
            Mode::Joint => 2,
        }
    }

    pub fn point(&self, x: &[f64]) -> ParamPoint {
        match self {
            Mode::OrderOnly { delta } => ParamPoint {
                s: x[0],
                delta: *delta,
            },
            Mode::Joint => ParamPoint {
                s: x[0],
                delta: x[1],
            },
        }
    }

    pub fn coords(&self, q: ParamPoint) -> Vec<f64> {
        match self {
            Mode::OrderOnly { .. } => vec![q.s],
            Mode::Joint => vec![q.s, q.delta],
        }
    }
}

/// The reduced cost `j(q) = ½‖u_h(q) − u_d‖²_{L²} + R(q)` and its gradient.
pub struct Objective<'a> {
    pub family: &'a OperatorFamily,
    pub solver: &'a Solver,
    pub load: Vec<f64>,
    pub u_d: Vec<f64>,
    pub reg: Regularizer,
    pub mode: Mode,
}

/// Cost, gradient and the states behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub q: ParamPoint,
    pub cost: f64,
    pub gradient: Vec<f64>,
    pub state: Vec<f64>,
    pub adjoint: Vec<f64>,
}

impl<'a> Objective<'a> {
    pub fn new(
        family: &'a OperatorFamily,
        solver: &'a Solver,
        load: Vec<f64>,
        u_d: Vec<f64>,
        reg: Regularizer,
        mode: Mode,
    ) -> Result<Self> {
        let n = family.n_dofs();
        for v in [&load, &u_d] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
        }
        if mode == Mode::Joint && reg.beta == 0.0 {
            return Err(Error::Config("joint identification needs beta > 0".into()));
        }
        Ok(Objective {
            family,
            solver,
            load,
            u_d,
            reg,
            mode,
        })
    }

    /// Rejects points outside the admissible set or the interpolation range.
    pub fn check_feasible(&self, q: ParamPoint) -> Result<()> {
        if !(q.s > 0.0 && q.s < 1.0) || !(q.delta > 0.0) {
            return Err(Error::Infeasible(format!("{q}")));
        }
        let (min, max) = self.family.schedule.s_range;
        if !(q.s >= min && q.s <= max) {
            return Err(Error::OutsideSchedule { s: q.s, min, max });
        }
        Ok(())
    }

    fn misfit(&self, u: &[f64]) -> f64 {
        let d: Vec<f64> = u.iter().zip(&self.u_d).map(|(a, b)| a - b).collect();
        0.5 * self.family.mass.bilinear(&d, &d)
    }

    pub fn state(&self, q: ParamPoint) -> Result<Vec<f64>> {
        self.check_feasible(q)?;
        Ok(self
            .solver
            .solve_state(self.family, q, &self.load)?
            .solution
            .coeffs)
    }

    pub fn cost(&self, q: ParamPoint) -> Result<f64> {
        let u = self.state(q)?;
        Ok(self.misfit(&u) + self.reg.value(q))
    }

    /// Cost and adjoint gradient `j′(q) = R′(q) − (u_hᵀ ∂_q Ã z_h)`.
    pub fn evaluate(&self, q: ParamPoint) -> Result<Evaluation> {
        let u = self.state(q)?;
        let cost = self.misfit(&u) + self.reg.value(q);
        let z = self
            .solver
            .solve_adjoint(self.family, q, &u, &self.u_d)?
            .solution
            .coeffs;
        let ds = self.family.evaluate_ds(q)?;
        let mut gradient = vec![self.reg.ds(q.s) - dot(&u, &ds.entries.matvec(&z))];
        if self.mode == Mode::Joint {
            let dd = self.family.evaluate_ddelta(q)?;
            gradient.push(self.reg.ddelta(q.delta) - dot(&u, &dd.entries.matvec(&z)));
        }
        Ok(Evaluation {
            q,
            cost,
            gradient,
            state: u,
            adjoint: z,
        })
    }

    pub fn gradient(&self, q: ParamPoint) -> Result<Vec<f64>> {
        Ok(self.evaluate(q)?.gradient)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
    pub c1: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            grad_tol: 1e-8,
            max_iter: 200,
            c1: 1e-4,
            backtrack: 0.5,
            max_backtracks: 40,
        }
    }
}

/// One accepted iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub iter: usize,
    pub q: ParamPoint,
    pub cost: f64,
    pub grad_norm: f64,
    /// Functional evaluations spent so far.
    pub n_evals: usize,
}

/// Trajectory and outcome of a BFGS run.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentifyRun {
    pub iterates: Vec<IterateRecord>,
    /// Every functional evaluation `(q, j(q))`, trial points included.
    pub evaluations: Vec<(ParamPoint, f64)>,
    pub n_functional_evals: usize,
    pub n_iterations: usize,
    pub final_q: ParamPoint,
    pub final_cost: f64,
    pub final_grad_norm: f64,
    pub converged: bool,
    pub message: String,
}

impl IdentifyRun {
    /// Trajectory CSV: `iter,s,delta,cost,grad_norm,n_evals`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iter,s,delta,cost,grad_norm,n_evals")?;
        for r in &self.iterates {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.iter, r.q.s, r.q.delta, r.cost, r.grad_norm, r.n_evals
            )?;
        }
        Ok(())
    }
}

fn is_infeasible(e: &Error) -> bool {
    matches!(
        e,
        Error::Infeasible(_)
            | Error::OutsideSchedule { .. }
            | Error::OrderOutOfRange(_)
            | Error::InvalidHorizon(_)
    )
}

/// BFGS with inverse-Hessian updates and Armijo backtracking; infeasible trial
/// points count as Armijo failures.
pub fn bfgs_identify(obj: &Objective, q0: ParamPoint, opts: &BfgsOptions) -> Result<IdentifyRun> {
    obj.check_feasible(q0)?;
    let n = obj.mode.dim();
    let mut x = obj.mode.coords(q0);
    let first = obj.evaluate(q0)?;
    let mut f = first.cost;
    let mut g = first.gradient;
    let mut evals = 1;
    let mut evaluations = vec![(q0, f)];
    let mut iterates = vec![IterateRecord {
        iter: 0,
        q: q0,
        cost: f,
        grad_norm: norm2(&g),
        n_evals: evals,
    }];

    let scaled_identity = |g: &[f64]| {
        let c = 1.0 / norm2(g).max(1.0);
        let mut h = vec![vec![0.0; n]; n];
        for (i, row) in h.iter_mut().enumerate() {
            row[i] = c;
        }
        h
    };
    let mut h = scaled_identity(&g);
    let mut fresh = true;
    let mut converged = norm2(&g) < opts.grad_tol;
    let mut message = String::new();
    let mut iter = 0;

    while !converged && iter < opts.max_iter {
        let mut p: Vec<f64> = h.iter().map(|row| -dot(row, &g)).collect();
        let mut slope = dot(&g, &p);
        if !(slope < 0.0) {
            h = scaled_identity(&g);
            fresh = true;
            p = h.iter().map(|row| -dot(row, &g)).collect();
            slope = dot(&g, &p);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let xt: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + t * b).collect();
            let qt = obj.mode.point(&xt);
            match obj.cost(qt) {
                Ok(ft) => {
                    evals += 1;
                    evaluations.push((qt, ft));
                    if ft <= f + opts.c1 * t * slope {
                        accepted = Some((xt, qt, ft));
                        break;
                    }
                }
                Err(e) if is_infeasible(&e) => {}
                Err(e) => return Err(e),
            }
            t *= opts.backtrack;
        }
        let Some((xt, qt, ft)) = accepted else {
            if fresh {
                message = "line search failed".into();
                break;
            }
            h = scaled_identity(&g);
            fresh = true;
            continue;
        };
        let ev = obj.evaluate(qt)?;
        let step: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = ev.gradient.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&step, &y);
        if sy > 1e-12 * norm2(&step) * norm2(&y) {
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            let rho = 1.0 / sy;
            let hy: Vec<f64> = h.iter().map(|row| dot(row, &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += -rho * (step[i] * hy[j] + hy[i] * step[j])
                        + (rho * rho * yhy + rho) * step[i] * step[j];
                }
            }
        }
        fresh = false;
        x = xt;
        f = ft;
        g = ev.gradient;
        iter += 1;
        iterates.push(IterateRecord {
            iter,
            q: qt,
            cost: f,
            grad_norm: norm2(&g),
            n_evals: evals,
        });
        converged = norm2(&g) < opts.grad_tol;
    }
    if !converged && message.is_empty() {
        message = format!("no convergence in {} iterations", opts.max_iter);
    } else if converged {
        message = "gradient tolerance reached".into();
    }
    let final_q = obj.mode.point(&x);
    Ok(IdentifyRun {
        iterates,
        evaluations,
        n_functional_evals: evals,
        n_iterations: iter,
        final_q,
        final_cost: f,
        final_grad_norm: norm2(&g),
        converged,
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::QuadratureConfig;
    use crate::cheb::build_schedule;
    use crate::mesh::{build_mesh, load_vector};
    use crate::opfamily::KernelScaling;
    use crate::oracle::fd_gradient;
    use std::sync::Arc;

    fn family(n_elem: usize) -> OperatorFamily {
        let mesh = Arc::new(build_mesh(-1.0, 1.0, n_elem).unwrap());
        let sched = build_schedule((0.05, 0.95), f64::INFINITY, 1e-10, 0.3).unwrap();
        OperatorFamily::precompute(
            mesh,
            sched,
            QuadratureConfig::default(),
            KernelScaling::Half,
        )
        .unwrap()
    }

    #[test]
    fn regularizer_values() {
        let r = Regularizer::new(5e-7, 1e-6).unwrap();
        let v = r.value(ParamPoint::new(0.75, 0.9).unwrap());
        let expected = 5e-7 / 0.1875 + 1e-6 * 0.9f64.exp() / 0.9;
        assert!((v - expected).abs() < 1e-20);
        assert!((v - 5.40e-6).abs() < 1e-8);
        assert_eq!(r.ds(0.5), 0.0);
        assert!((r.value(ParamPoint::infinite(0.5).unwrap()) - 2e-6).abs() < 1e-20);
        assert!(Regularizer::new(0.0, 1.0).is_err());
        for (s, d) in [(0.3, 0.4), (0.8, 2.0)] {
            let e = 1e-6;
            let fd_s = (r.value(ParamPoint::new(s + e, d).unwrap())
                - r.value(ParamPoint::new(s - e, d).unwrap()))
                / (2.0 * e);
            let fd_d = (r.value(ParamPoint::new(s, d + e).unwrap())
                - r.value(ParamPoint::new(s, d - e).unwrap()))
                / (2.0 * e);
            assert!((fd_s - r.ds(s)).abs() < 1e-6 * fd_s.abs().max(1e-6));
            assert!((fd_d - r.ddelta(d)).abs() < 1e-6 * fd_d.abs().max(1e-6));
        }
    }

    #[test]
    fn exact_data_leaves_regularizer() {
        let fam = family(32);
        let solver = Solver::default();
        let load = load_vector(&fam.mesh, |_| 1.0);
        let q = ParamPoint::new(0.5, 0.9).unwrap();
        let u = solver.solve_state(&fam, q, &load).unwrap().solution.coeffs;
        let reg = Regularizer::new(1e-3, 1e-3).unwrap();
        let obj = Objective::new(&fam, &solver, load, u, reg, Mode::Joint).unwrap();
        let ev = obj.evaluate(q).unwrap();
        assert_eq!(ev.cost, reg.value(q));
        assert!(ev.adjoint.iter().all(|&v| v == 0.0));
        assert_eq!(ev.gradient[0], 0.0);
        assert_eq!(ev.gradient[1], reg.ddelta(0.9));
    }

    #[test]
    fn gradient_matches_fd() {
        let fam = family(32);
        let solver = Solver::default();
        let load = load_vector(&fam.mesh, |_| 1.0);
        let q_star = ParamPoint::new(0.75, 0.9).unwrap();
        let u_d = solver
            .solve_state(&fam, q_star, &load)
            .unwrap()
            .solution
            .coeffs;
        let reg = Regularizer::new(5e-7, 1e-6).unwrap();
        let obj = Objective::new(&fam, &solver, load, u_d, reg, Mode::Joint).unwrap();
        let q = ParamPoint::new(0.6, 0.8).unwrap();
        let g = obj.gradient(q).unwrap();
        let fd = fd_gradient(
            |x| obj.cost(ParamPoint::new(x[0], x[1])?),
            &[0.6, 0.8],
            1e-5,
        )
        .unwrap();
        for i in 0..2 {
            assert!(((g[i] - fd[i]) / fd[i]).abs() < 1e-4, "{g:?} {fd:?}");
        }
    }

    #[test]
    fn bfgs_recovers_generating_parameters() {
        let fam = family(64);
        let solver = Solver::default();
        let load = load_vector(&fam.mesh, |_| 1.0);
        let q_star = ParamPoint::new(0.6, 0.7).unwrap();
        let u_d = solver
            .solve_state(&fam, q_star, &load)
            .unwrap()
            .solution
            .coeffs;
        let reg = Regularizer::new(1e-12, 1e-12).unwrap();
        let obj = Objective::new(&fam, &solver, load, u_d, reg, Mode::Joint).unwrap();
        let run = bfgs_identify(
            &obj,
            ParamPoint::new(0.3, 0.5).unwrap(),
            &BfgsOptions::default(),
        )
        .unwrap();
        assert!((run.final_q.s - 0.6).abs() < 1e-3, "{:?}", run.final_q);
        assert!((run.final_q.delta - 0.7).abs() < 1e-3, "{:?}", run.final_q);
        for w in run.iterates.windows(2) {
            assert!(w[1].cost < w[0].cost);
        }
        for (q, _) in &run.evaluations {
            assert!(q.s > 0.0 && q.s < 1.0 && q.delta > 0.0);
        }
        let mut buf = Vec::new();
        run.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("iter,s,delta,cost,grad_norm,n_evals\n"));
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let fam = family(16);
        let solver = Solver::default();
        let load = load_vector(&fam.mesh, |_| 1.0);
        let obj = Objective::new(
            &fam,
            &solver,
            load.clone(),
            load,
            Regularizer::new(1e-3, 0.0).unwrap(),
            Mode::OrderOnly {
                delta: f64::INFINITY,
            },
        )
        .unwrap();
        assert!(bfgs_identify(
            &obj,
            ParamPoint::infinite(0.01).unwrap(),
            &BfgsOptions::default()
        )
        .is_err());
    }
}
