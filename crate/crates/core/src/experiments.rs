//! Experiment runners behind the command-line tool: configuration, the five
//! studies, CSV output with a metadata block.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{assemble_correction, ParamPoint, QuadratureConfig};
use crate::cheb::{build_schedule, optimize_xi, ChebSchedule};
use crate::control::{bfgs_identify, BfgsOptions, IdentifyRun, Mode, Objective, Regularizer};
use crate::error::{Error, Result};
use crate::mesh::{build_mesh, l2_error, load_vector, FieldVector, Mesh1D};
use crate::opfamily::{auto_eta, OperatorFamily};
use crate::oracle::{
    add_noise, fd_gradient, getoor_integral, getoor_solution, ProblemId, TestProblem,
};
use crate::solve::{Solver, SolverKind};
use crate::toeplitz::dot;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A setting that is either given or derived from the problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Auto {
    Auto,
    Value(f64),
}

impl Auto {
    fn parse(v: &str) -> Result<Self> {
        if v == "auto" {
            Ok(Auto::Auto)
        } else {
            Ok(Auto::Value(parse_f64("", v)?))
        }
    }
}

impl std::fmt::Display for Auto {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Auto::Auto => f.write_str("auto"),
            Auto::Value(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemId,
    pub n_elem: usize,
    pub s_range: (f64, f64),
    pub eta: Auto,
    pub xi: Auto,
    pub q0: ParamPoint,
    pub s_star: f64,
    pub delta_star: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub seed: u64,
    pub solver: SolverKind,
    pub solver_tol: f64,
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Mesh levels `l` (`h = 2^{−l}` on `(−1, 1)`) for convergence and bench.
    pub levels: Vec<u32>,
    /// Interpolation orders for the interpolation study.
    pub m_list: Vec<usize>,
    /// Tolerances for the node-count sweep of the interpolation study.
    pub eta_list: Vec<f64>,
    pub output_path: Option<PathBuf>,
}

const KEYS: &[&str] = &[
    "problem",
    "n_elem",
    "s_min",
    "s_max",
    "eta",
    "xi",
    "s0",
    "delta0",
    "s_star",
    "delta_star",
    "alpha",
    "beta",
    "sigma",
    "seed",
    "solver",
    "solver_tol",
    "grad_tol",
    "max_iter",
    "levels",
    "m_list",
    "eta_list",
    "out",
];

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}' as a number")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("{key}: bad list entry '{t}'")))
        })
        .collect()
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    /// Defaults reproducing the reference setups of the two test problems.
    pub fn for_problem(problem: ProblemId) -> Self {
        let (s_star, delta_star, q0, beta) = match problem {
            ProblemId::I => (
                0.5,
                f64::INFINITY,
                ParamPoint {
                    s: 0.1,
                    delta: f64::INFINITY,
                },
                0.0,
            ),
            ProblemId::II => (0.75, 0.9, ParamPoint { s: 0.1, delta: 0.5 }, 1e-6),
        };
        ExperimentConfig {
            problem,
            n_elem: 1 << 11,
            s_range: (0.1, 0.9),
            eta: Auto::Auto,
            xi: Auto::Auto,
            q0,
            s_star,
            delta_star,
            alpha: 5e-7,
            beta,
            sigma: 0.0,
            seed: 0,
            solver: SolverKind::Direct,
            solver_tol: 1e-10,
            grad_tol: 1e-8,
            max_iter: 200,
            levels: vec![4, 5, 6, 7, 8, 9],
            m_list: (1..=10).collect(),
            eta_list: (2..=8).map(|p| 10f64.powi(-p)).collect(),
            output_path: None,
        }
    }

    /// Builds a configuration from `key=value` pairs; `problem` selects the
    /// defaults the remaining keys override.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        for k in pairs.keys() {
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key '{k}'")));
            }
        }
        let problem = match pairs.get("problem") {
            Some(v) => v.parse()?,
            None => ProblemId::II,
        };
        let mut c = Self::for_problem(problem);
        for (k, v) in pairs {
            let v = v.trim();
            match k.as_str() {
                "problem" => {}
                "n_elem" => {
                    c.n_elem = v
                        .parse()
                        .map_err(|_| Error::Config(format!("n_elem: '{v}'")))?
                }
                "s_min" => c.s_range.0 = parse_f64(k, v)?,
                "s_max" => c.s_range.1 = parse_f64(k, v)?,
                "eta" => c.eta = Auto::parse(v)?,
                "xi" => c.xi = Auto::parse(v)?,
                "s0" => c.q0.s = parse_f64(k, v)?,
                "delta0" => c.q0.delta = parse_f64(k, v)?,
                "s_star" => c.s_star = parse_f64(k, v)?,
                "delta_star" => c.delta_star = parse_f64(k, v)?,
                "alpha" => c.alpha = parse_f64(k, v)?,
                "beta" => c.beta = parse_f64(k, v)?,
                "sigma" => c.sigma = parse_f64(k, v)?,
                "seed" => {
                    c.seed = v
                        .parse()
                        .map_err(|_| Error::Config(format!("seed: '{v}'")))?
                }
                "solver" => c.solver = v.parse()?,
                "solver_tol" => c.solver_tol = parse_f64(k, v)?,
                "grad_tol" => c.grad_tol = parse_f64(k, v)?,
                "max_iter" => {
                    c.max_iter = v
                        .parse()
                        .map_err(|_| Error::Config(format!("max_iter: '{v}'")))?
                }
                "levels" => c.levels = parse_list(k, v)?,
                "m_list" => c.m_list = parse_list(k, v)?,
                "eta_list" => c.eta_list = parse_list(k, v)?,
                "out" => {
                    c.output_path = if v.is_empty() {
                        None
                    } else {
                        Some(PathBuf::from(v))
                    }
                }
                _ => unreachable!(),
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Parses flat `key=value` text; `#` starts a comment.
    pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", no + 1)))?;
            out.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&Self::parse_pairs(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_elem < 2 {
            return err(format!("n_elem = {} < 2", self.n_elem));
        }
        let (lo, hi) = self.s_range;
        if !(lo > 0.0 && lo < hi && hi < 1.0) {
            return err(format!("s range [{lo}, {hi}] not inside (0, 1)"));
        }
        if !(self.alpha > 0.0) || !(self.beta >= 0.0) || !(self.sigma >= 0.0) {
            return err("need alpha > 0, beta >= 0, sigma >= 0".into());
        }
        TestProblem {
            id: self.problem,
            s_star: self.s_star,
            delta_star: self.delta_star,
            scaling: self.test_problem().scaling,
        }
        .validate()?;
        if self.problem == ProblemId::II && self.beta == 0.0 {
            return err("problem II identifies delta and needs beta > 0".into());
        }
        if self.problem == ProblemId::I && self.q0.delta != f64::INFINITY {
            return err("problem I starts from an infinite horizon (delta0 = inf)".into());
        }
        if !(self.solver_tol > 0.0) || !(self.grad_tol > 0.0) {
            return err("tolerances must be positive".into());
        }
        Ok(())
    }

    pub fn test_problem(&self) -> TestProblem {
        match self.problem {
            ProblemId::I => TestProblem::problem_i(self.s_star),
            ProblemId::II => TestProblem::problem_ii(self.s_star, self.delta_star),
        }
    }

    /// Ordered `key=value` lines; [`ExperimentConfig::parse`] inverts this.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let out = self
            .output_path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        vec![
            ("problem".into(), self.problem.to_string()),
            ("n_elem".into(), self.n_elem.to_string()),
            ("s_min".into(), self.s_range.0.to_string()),
            ("s_max".into(), self.s_range.1.to_string()),
            ("eta".into(), self.eta.to_string()),
            ("xi".into(), self.xi.to_string()),
            ("s0".into(), self.q0.s.to_string()),
            ("delta0".into(), self.q0.delta.to_string()),
            ("s_star".into(), self.s_star.to_string()),
            ("delta_star".into(), self.delta_star.to_string()),
            ("alpha".into(), self.alpha.to_string()),
            ("beta".into(), self.beta.to_string()),
            ("sigma".into(), self.sigma.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("solver".into(), self.solver.to_string()),
            ("solver_tol".into(), self.solver_tol.to_string()),
            ("grad_tol".into(), self.grad_tol.to_string()),
            ("max_iter".into(), self.max_iter.to_string()),
            ("levels".into(), join(&self.levels)),
            ("m_list".into(), join(&self.m_list)),
            ("eta_list".into(), join(&self.eta_list)),
            ("out".into(), out),
        ]
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn mesh(&self) -> Result<Arc<Mesh1D>> {
        Ok(Arc::new(build_mesh(-1.0, 1.0, self.n_elem)?))
    }
}

/// Metadata comment block: tool version, command, and the configuration.
pub fn write_metadata<W: Write>(
    mut w: W,
    command: &str,
    cfg: &ExperimentConfig,
) -> std::io::Result<()> {
    writeln!(w, "# fracident {VERSION}")?;
    writeln!(w, "# command: {command}")?;
    for (k, v) in cfg.to_pairs() {
        writeln!(w, "# {k}={v}")?;
    }
    Ok(())
}

/// Recovers the configuration echoed in a CSV metadata block.
pub fn config_from_metadata(csv: &str) -> Result<ExperimentConfig> {
    let body: String = csv
        .lines()
        .filter_map(|l| l.strip_prefix("# "))
        .filter(|l| l.contains('='))
        .map(|l| format!("{l}\n"))
        .collect();
    ExperimentConfig::parse(&body)
}

fn write_csv_file<F>(path: &Path, command: &str, cfg: &ExperimentConfig, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_metadata(&mut f, command, cfg)?;
    body(&mut f)?;
    f.flush()?;
    Ok(())
}

/// `<stem><suffix>.csv` next to `path`.
pub fn sibling_path(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}.csv"))
}

/// Named pass/fail checks of a run; the process exit code is zero iff all pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checks(pub Vec<(String, bool)>);

impl Checks {
    pub fn push(&mut self, name: impl Into<String>, ok: bool) {
        self.0.push((name.into(), ok));
    }

    pub fn all_pass(&self) -> bool {
        self.0.iter().all(|(_, ok)| *ok)
    }
}

/// Schedule, family and data for one problem on one mesh.
pub struct Setup {
    pub mesh: Arc<Mesh1D>,
    pub family: OperatorFamily,
    pub eta: f64,
    pub xi: f64,
    pub load: Vec<f64>,
}

/// Resolves `eta`/`xi` and precomputes the operator family.
pub fn setup(cfg: &ExperimentConfig, mesh: Arc<Mesh1D>) -> Result<Setup> {
    let problem = cfg.test_problem();
    let quad = QuadratureConfig::default();
    let eta = match cfg.eta {
        Auto::Value(v) => v,
        Auto::Auto => auto_eta(&mesh, cfg.s_range.0, problem.scaling, &quad)?,
    };
    // node matrices are infinite-horizon ones, so the schedule uses δ = ∞
    let xi = match cfg.xi {
        Auto::Value(v) => v,
        Auto::Auto => optimize_xi(cfg.s_range, f64::INFINITY, eta)?,
    };
    let schedule = build_schedule(cfg.s_range, f64::INFINITY, eta, xi)?;
    let family = OperatorFamily::precompute(mesh.clone(), schedule, quad, problem.scaling)?;
    let load = load_vector(&mesh, |x| problem.forcing(x));
    Ok(Setup {
        mesh,
        family,
        eta,
        xi,
        load,
    })
}

/// Observed data: the interpolated exact solution (problem I) or the discrete
/// state at the generating parameters (problem II), plus seeded noise.
pub fn observed_data(cfg: &ExperimentConfig, st: &Setup, solver: &Solver) -> Result<Vec<f64>> {
    let clean = match cfg.problem {
        ProblemId::I => st.mesh.interpolate(getoor_solution(cfg.s_star)),
        ProblemId::II => {
            let q = ParamPoint::new(cfg.s_star, cfg.delta_star)?;
            solver.solve_state(&st.family, q, &st.load)?.solution.coeffs
        }
    };
    let clean = FieldVector::new(st.mesh.clone(), clean)?;
    Ok(add_noise(&clean, cfg.sigma, cfg.seed)?.coeffs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifyOutcome {
    pub h: f64,
    pub n: usize,
    pub eta: f64,
    pub xi: f64,
    pub nodes: usize,
    pub run: IdentifyRun,
    pub checks: Checks,
}

impl IdentifyOutcome {
    /// `h,N,s,delta,iterations,evaluations`.
    pub fn write_summary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "h,N,s,delta,iterations,evaluations")?;
        let q = self.run.final_q;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            self.h, self.n, q.s, q.delta, self.run.n_iterations, self.run.n_functional_evals
        )
    }
}

pub fn run_identify(cfg: &ExperimentConfig) -> Result<IdentifyOutcome> {
    cfg.validate()?;
    let st = setup(cfg, cfg.mesh()?)?;
    let solver = Solver::new(cfg.solver, cfg.solver_tol);
    let u_d = observed_data(cfg, &st, &solver)?;
    let mode = match cfg.problem {
        ProblemId::I => Mode::OrderOnly {
            delta: f64::INFINITY,
        },
        ProblemId::II => Mode::Joint,
    };
    let reg = Regularizer::new(cfg.alpha, cfg.beta)?;
    let obj = Objective::new(&st.family, &solver, st.load.clone(), u_d, reg, mode)?;
    let opts = BfgsOptions {
        grad_tol: cfg.grad_tol,
        max_iter: cfg.max_iter,
        ..Default::default()
    };
    let run = bfgs_identify(&obj, cfg.q0, &opts)?;
    let mut checks = Checks::default();
    checks.push("converged", run.converged);
    let out = IdentifyOutcome {
        h: st.mesh.h,
        n: st.mesh.n_dofs(),
        eta: st.eta,
        xi: st.xi,
        nodes: st.family.schedule.total_nodes(),
        run,
        checks,
    };
    if let Some(path) = &cfg.output_path {
        write_csv_file(path, "identify", cfg, |w| out.run.write_csv(w))?;
        write_csv_file(&sibling_path(path, "_summary"), "identify", cfg, |w| {
            out.write_summary(w)
        })?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub h: f64,
    pub n: usize,
    /// Energy error with the interpolated operator.
    pub error_hs: f64,
    /// Energy error with the directly assembled operator.
    pub error_hs_exact: f64,
    pub error_l2: f64,
    /// Rates against the previous row (NaN on the first).
    pub rate_hs: f64,
    pub rate_l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceOutcome {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slopes of log error against log h.
    pub fitted_rate_hs: f64,
    pub fitted_rate_l2: f64,
    pub checks: Checks,
}

/// Least-squares slope and coefficient of determination of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (slope, r2)
}

struct LevelSolve {
    mesh: Arc<Mesh1D>,
    load: Vec<f64>,
    u_interp: Vec<f64>,
    u_exact_op: Vec<f64>,
    exact: crate::StiffnessMatrix,
}

fn n_elem_for_level(level: u32) -> usize {
    // h = 2^{-level} on an interval of length 2
    1usize << (level + 1)
}

/// Error study under mesh refinement at `s_star` (and `delta_star`). Problem I
/// uses the closed-form solution; the energy error follows from Galerkin
/// orthogonality, `‖u − u_h‖²_a = (f, u) − 2(f, u_h) + a(u_h, u_h)`. Problem II
/// compares against a solve on a mesh four times finer than the finest level.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceOutcome> {
    cfg.validate()?;
    let mut levels = cfg.levels.clone();
    levels.sort_unstable();
    if levels.len() < 2 {
        return Err(Error::Config(
            "convergence needs at least two levels".into(),
        ));
    }
    let q = match cfg.problem {
        ProblemId::I => ParamPoint::infinite(cfg.s_star)?,
        ProblemId::II => ParamPoint::new(cfg.s_star, cfg.delta_star)?,
    };
    let solver_kind = cfg.solver;
    let solve_level = |n_elem: usize| -> Result<LevelSolve> {
        let mesh = Arc::new(build_mesh(-1.0, 1.0, n_elem)?);
        let st = setup(cfg, mesh.clone())?;
        let solver = Solver::new(solver_kind, cfg.solver_tol);
        let u_interp = solver.solve_state(&st.family, q, &st.load)?.solution.coeffs;
        let exact = st.family.exact(q)?;
        let f = crate::solve::Factorization::new(exact.clone(), solver_kind)?;
        let (u_exact_op, _, _) = f.solve(&st.load, cfg.solver_tol, solver_kind)?;
        Ok(LevelSolve {
            mesh,
            load: st.load,
            u_interp,
            u_exact_op,
            exact,
        })
    };

    // reference quantities
    let (ref_energy, ref_fn): (f64, Box<dyn Fn(f64) -> f64 + Sync>) = match cfg.problem {
        ProblemId::I => (
            getoor_integral(cfg.s_star),
            Box::new(getoor_solution(cfg.s_star)),
        ),
        ProblemId::II => {
            let finest = *levels.last().unwrap();
            let fine = solve_level(n_elem_for_level(finest + 2))?;
            let energy = dot(&fine.load, &fine.u_exact_op);
            let fv = FieldVector::new(fine.mesh, fine.u_exact_op)?;
            (energy, Box::new(move |x| fv.eval(x)))
        }
    };

    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for &level in &levels {
        let LevelSolve {
            mesh,
            load,
            u_interp: u_t,
            u_exact_op: u_e,
            exact: a,
        } = solve_level(n_elem_for_level(level))?;
        let err_sq = |u: &[f64]| ref_energy - 2.0 * dot(&load, u) + a.entries.bilinear(u, u);
        let error_hs = err_sq(&u_t).max(0.0).sqrt();
        let error_hs_exact = err_sq(&u_e).max(0.0).sqrt();
        let error_l2 = l2_error(&FieldVector::new(mesh.clone(), u_t)?, &ref_fn);
        let (rate_hs, rate_l2) = match rows.last() {
            Some(p) => {
                let r = (p.h / mesh.h).ln();
                (
                    (p.error_hs / error_hs).ln() / r,
                    (p.error_l2 / error_l2).ln() / r,
                )
            }
            None => (f64::NAN, f64::NAN),
        };
        rows.push(ConvergenceRow {
            h: mesh.h,
            n: mesh.n_dofs(),
            error_hs,
            error_hs_exact,
            error_l2,
            rate_hs,
            rate_l2,
        });
    }
    let lh: Vec<f64> = rows.iter().map(|r| r.h.ln()).collect();
    let (fitted_rate_hs, _) = linear_fit(
        &lh,
        &rows.iter().map(|r| r.error_hs.ln()).collect::<Vec<_>>(),
    );
    let (fitted_rate_l2, _) = linear_fit(
        &lh,
        &rows.iter().map(|r| r.error_l2.ln()).collect::<Vec<_>>(),
    );
    let mut checks = Checks::default();
    checks.push("energy rate >= 0.45", fitted_rate_hs >= 0.45);
    checks.push(
        "interpolated and direct errors within 5%",
        rows.iter()
            .all(|r| (r.error_hs - r.error_hs_exact).abs() <= 0.05 * r.error_hs_exact),
    );
    let out = ConvergenceOutcome {
        rows,
        fitted_rate_hs,
        fitted_rate_l2,
        checks,
    };
    if let Some(path) = &cfg.output_path {
        write_csv_file(path, "convergence", cfg, |w| {
            writeln!(w, "h,N,error_Hs,error_Hs_exact,error_L2,rate_Hs,rate_L2")?;
            for r in &out.rows {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    r.h, r.n, r.error_hs, r.error_hs_exact, r.error_l2, r.rate_hs, r.rate_l2
                )?;
            }
            writeln!(w, "# fitted_rate_Hs={}", out.fitted_rate_hs)?;
            writeln!(w, "# fitted_rate_L2={}", out.fitted_rate_l2)
        })?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpRow {
    pub m: usize,
    pub nodes: usize,
    /// Largest relative energy error `‖ũ_{h,M} − u_h‖_a / ‖u_h‖_a` over the
    /// sample orders.
    pub solution_error: f64,
    /// Largest `|j̃′_M − j̃′_{M̄}|` over the sample orders.
    pub deriv_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeCountRow {
    pub eta: f64,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpOutcome {
    pub xi: f64,
    pub m_bar: usize,
    pub rows: Vec<InterpRow>,
    pub node_counts: Vec<NodeCountRow>,
    /// R² of node count against |log η|.
    pub node_count_r2: f64,
    pub checks: Checks,
}

/// Errors below this relative level count as the quadrature floor in the
/// interpolation study.
pub const INTERP_FLOOR: f64 = 1e-9;
/// Sample orders at which interpolation errors are measured.
pub const INTERP_SAMPLES: [f64; 7] = [0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.85];

/// Convergence of the operator interpolation in the per-interval order `M` at
/// fixed mesh and `ξ`, for problem I (`u_d = 1 − x²` in the derivative
/// study), plus node counts of the schedule over a tolerance sweep.
pub fn run_interp_study(cfg: &ExperimentConfig) -> Result<InterpOutcome> {
    cfg.validate()?;
    let mesh = cfg.mesh()?;
    let quad = QuadratureConfig::default();
    let problem = TestProblem::problem_i(0.5);
    let xi = match cfg.xi {
        Auto::Value(v) => v,
        Auto::Auto => 0.3,
    };
    let base = build_schedule(cfg.s_range, f64::INFINITY, 1e-6, xi)?;
    let m_max = cfg.m_list.iter().copied().max().unwrap_or(1);
    let m_bar = m_max + 8;
    let load = load_vector(&mesh, |_| 1.0);
    let u_d = mesh.interpolate(|x| 1.0 - x * x);
    let samples: Vec<f64> = INTERP_SAMPLES
        .iter()
        .copied()
        .filter(|s| *s >= cfg.s_range.0 && *s <= cfg.s_range.1)
        .collect();

    let family_with = |m: usize| -> Result<OperatorFamily> {
        OperatorFamily::precompute(
            mesh.clone(),
            base.with_uniform_order(m),
            quad,
            problem.scaling,
        )
    };
    let reference = family_with(m_bar)?;
    let solver = Solver::new(cfg.solver, cfg.solver_tol);
    let reg = Regularizer::new(cfg.alpha, 0.0)?;
    let mode = Mode::OrderOnly {
        delta: f64::INFINITY,
    };
    let mut exact_states = Vec::new();
    let mut ref_grads = Vec::new();
    {
        let obj = Objective::new(&reference, &solver, load.clone(), u_d.clone(), reg, mode)?;
        for &s in &samples {
            let q = ParamPoint::infinite(s)?;
            let a = reference.exact(q)?;
            let f = crate::solve::Factorization::new(a.clone(), cfg.solver)?;
            let (u, _, _) = f.solve(&load, cfg.solver_tol, cfg.solver)?;
            exact_states.push((u, a));
            ref_grads.push(obj.gradient(q)?[0]);
        }
    }
    let mut rows = Vec::new();
    for &m in &cfg.m_list {
        let fam = family_with(m)?;
        let solver = Solver::new(cfg.solver, cfg.solver_tol);
        let obj = Objective::new(&fam, &solver, load.clone(), u_d.clone(), reg, mode)?;
        let mut solution_error: f64 = 0.0;
        let mut deriv_error: f64 = 0.0;
        for (i, &s) in samples.iter().enumerate() {
            let q = ParamPoint::infinite(s)?;
            let ev = obj.evaluate(q)?;
            let (u, a) = &exact_states[i];
            let d: Vec<f64> = ev.state.iter().zip(u).map(|(x, y)| x - y).collect();
            let rel = (a.entries.bilinear(&d, &d) / a.entries.bilinear(u, u))
                .max(0.0)
                .sqrt();
            solution_error = solution_error.max(rel);
            deriv_error = deriv_error.max((ev.gradient[0] - ref_grads[i]).abs());
        }
        rows.push(InterpRow {
            m,
            nodes: fam.schedule.total_nodes(),
            solution_error,
            deriv_error,
        });
    }

    let node_counts: Vec<NodeCountRow> = cfg
        .eta_list
        .iter()
        .map(|&eta| {
            Ok(NodeCountRow {
                eta,
                nodes: build_schedule(cfg.s_range, f64::INFINITY, eta, xi)?.total_nodes(),
            })
        })
        .collect::<Result<_>>()?;
    let (_, node_count_r2) = linear_fit(
        &node_counts
            .iter()
            .map(|r| r.eta.ln().abs())
            .collect::<Vec<_>>(),
        &node_counts
            .iter()
            .map(|r| r.nodes as f64)
            .collect::<Vec<_>>(),
    );

    let mut checks = Checks::default();
    checks.push(
        "solution error drops by >= 3 per node until the floor",
        geometric_until_floor(&rows),
    );
    checks.push(
        "node count linear in |log eta| (R^2 >= 0.95)",
        node_count_r2 >= 0.95,
    );
    let out = InterpOutcome {
        xi,
        m_bar,
        rows,
        node_counts,
        node_count_r2,
        checks,
    };
    if let Some(path) = &cfg.output_path {
        write_csv_file(path, "interp-study", cfg, |w| {
            writeln!(w, "M,nodes,solution_error,deriv_error")?;
            for r in &out.rows {
                writeln!(
                    w,
                    "{},{},{},{}",
                    r.m, r.nodes, r.solution_error, r.deriv_error
                )?;
            }
            writeln!(w, "# xi={} M_bar={}", out.xi, out.m_bar)
        })?;
        write_csv_file(&sibling_path(path, "_nodes"), "interp-study", cfg, |w| {
            writeln!(w, "eta,nodes")?;
            for r in &out.node_counts {
                writeln!(w, "{},{}", r.eta, r.nodes)?;
            }
            writeln!(w, "# r2={}", out.node_count_r2)
        })?;
    }
    Ok(out)
}

/// Each added node cuts the error by at least 3 until the error is at the
/// floor; rows must be sorted by `M` with unit steps to count.
pub fn geometric_until_floor(rows: &[InterpRow]) -> bool {
    rows.windows(2).all(|w| {
        let per_node =
            (w[0].solution_error / w[1].solution_error).powf(1.0 / (w[1].m - w[0].m) as f64);
        w[0].solution_error <= INTERP_FLOOR
            || w[1].solution_error <= INTERP_FLOOR
            || per_node >= 3.0
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub phase: String,
    pub n: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutcome {
    pub rows: Vec<BenchRow>,
    pub checks: Checks,
}

const BENCH_REPEATS: usize = 3;

/// Wall-clock of node-matrix precomputation and of correction assembly at a
/// short (`δ = 0.5`) and a long (`δ = 2.5 ≥ diam Ω`) horizon.
pub fn run_bench(cfg: &ExperimentConfig) -> Result<BenchOutcome> {
    cfg.validate()?;
    let quad = QuadratureConfig::default();
    let s = cfg.s_star;
    let mut rows = Vec::new();
    let mut checks = Checks::default();
    for &level in &cfg.levels {
        let mesh = Arc::new(build_mesh(-1.0, 1.0, n_elem_for_level(level))?);
        let n = mesh.n_dofs();
        let st = setup(cfg, mesh.clone())?;
        let pre = st
            .family
            .timings()
            .into_iter()
            .find(|t| t.phase == "precompute")
            .map(|t| t.seconds)
            .unwrap_or(0.0);
        rows.push(BenchRow {
            phase: "precompute".into(),
            n,
            seconds: pre,
        });
        rows.push(BenchRow {
            phase: "precompute_per_node".into(),
            n,
            seconds: pre / st.family.schedule.total_nodes() as f64,
        });
        let time = |delta: f64| -> Result<f64> {
            let mut best = f64::INFINITY;
            for _ in 0..BENCH_REPEATS {
                let t = Instant::now();
                std::hint::black_box(assemble_correction(&mesh, s, delta, &quad)?);
                best = best.min(t.elapsed().as_secs_f64());
            }
            Ok(best)
        };
        let short = time(0.5)?;
        let long = time(2.5)?;
        rows.push(BenchRow {
            phase: "correction_delta_0.5".into(),
            n,
            seconds: short,
        });
        rows.push(BenchRow {
            phase: "correction_delta_2.5".into(),
            n,
            seconds: long,
        });
        if mesh.n_elem >= 1 << 10 {
            checks.push(
                format!("long-horizon correction cheaper at N={n}"),
                long < 0.5 * short,
            );
        }
    }
    let out = BenchOutcome { rows, checks };
    if let Some(path) = &cfg.output_path {
        write_csv_file(path, "bench", cfg, |w| {
            writeln!(w, "phase,N,seconds")?;
            for r in &out.rows {
                writeln!(w, "{},{},{}", r.phase, r.n, r.seconds)?;
            }
            Ok(())
        })?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub q: ParamPoint,
    pub adjoint: Vec<f64>,
    pub fd: Vec<f64>,
    /// `‖g_adj − g_fd‖ / ‖g_fd‖`.
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOutcome {
    pub rows: Vec<GradcheckRow>,
    pub checks: Checks,
}

pub const GRADCHECK_POINTS: usize = 10;
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Adjoint gradient against central differences of the cost at random
/// feasible points drawn from the seeded generator.
pub fn run_gradcheck(cfg: &ExperimentConfig) -> Result<GradcheckOutcome> {
    cfg.validate()?;
    let st = setup(cfg, cfg.mesh()?)?;
    let solver = Solver::new(cfg.solver, cfg.solver_tol);
    let u_d = observed_data(cfg, &st, &solver)?;
    let (mode, beta) = match cfg.problem {
        ProblemId::I => (
            Mode::OrderOnly {
                delta: f64::INFINITY,
            },
            0.0,
        ),
        ProblemId::II => (Mode::Joint, cfg.beta),
    };
    let reg = Regularizer::new(cfg.alpha, beta)?;
    let obj = Objective::new(&st.family, &solver, st.load.clone(), u_d, reg, mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = cfg.s_range;
    let margin = 0.05 * (hi - lo);
    let mut rows = Vec::new();
    for _ in 0..GRADCHECK_POINTS {
        let s = rng.random_range(lo + margin..hi - margin);
        let delta = if mode == Mode::Joint {
            rng.random_range(0.3..2.5)
        } else {
            f64::INFINITY
        };
        let q = ParamPoint::new(s, delta)?;
        let adjoint = obj.gradient(q)?;
        let fd = fd_gradient(|x| obj.cost(mode.point(x)), &mode.coords(q), GRADCHECK_STEP)?;
        let diff: Vec<f64> = adjoint.iter().zip(&fd).map(|(a, b)| a - b).collect();
        let rel_error = crate::toeplitz::norm2(&diff) / crate::toeplitz::norm2(&fd);
        rows.push(GradcheckRow {
            q,
            adjoint,
            fd,
            rel_error,
        });
    }
    let mut checks = Checks::default();
    checks.push(
        "adjoint gradient matches finite differences",
        rows.iter().all(|r| r.rel_error <= GRADCHECK_TOL),
    );
    let out = GradcheckOutcome { rows, checks };
    if let Some(path) = &cfg.output_path {
        write_csv_file(path, "gradcheck", cfg, |w| {
            writeln!(w, "s,delta,grad_s,grad_delta,fd_s,fd_delta,rel_error")?;
            for r in &out.rows {
                let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(f64::NAN);
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    r.q.s,
                    r.q.delta,
                    get(&r.adjoint, 0),
                    get(&r.adjoint, 1),
                    get(&r.fd, 0),
                    get(&r.fd, 1),
                    r.rel_error
                )?;
            }
            Ok(())
        })?;
    }
    Ok(out)
}

/// The schedule a configuration resolves to, for inspection.
pub fn resolved_schedule(cfg: &ExperimentConfig) -> Result<ChebSchedule> {
    let mesh = cfg.mesh()?;
    let quad = QuadratureConfig::default();
    let eta = match cfg.eta {
        Auto::Value(v) => v,
        Auto::Auto => auto_eta(&mesh, cfg.s_range.0, cfg.test_problem().scaling, &quad)?,
    };
    let xi = match cfg.xi {
        Auto::Value(v) => v,
        Auto::Auto => optimize_xi(cfg.s_range, f64::INFINITY, eta)?,
    };
    build_schedule(cfg.s_range, f64::INFINITY, eta, xi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_metadata() {
        let mut cfg = ExperimentConfig::for_problem(ProblemId::II);
        cfg.eta = Auto::Value(1e-7);
        cfg.sigma = 0.03125;
        cfg.output_path = Some(PathBuf::from("out/run.csv"));
        let mut buf = Vec::new();
        write_metadata(&mut buf, "identify", &cfg).unwrap();
        writeln!(buf, "iter,s").unwrap();
        let back = config_from_metadata(&String::from_utf8(buf).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let cfg1 = ExperimentConfig::for_problem(ProblemId::I);
        assert_eq!(ExperimentConfig::parse(&cfg1.to_text()).unwrap(), cfg1);
    }

    #[test]
    fn config_parsing() {
        let c =
            ExperimentConfig::parse("# comment\nproblem = I\nn_elem=64 # trailing\nlevels=4,5\n")
                .unwrap();
        assert_eq!(c.problem, ProblemId::I);
        assert_eq!(c.n_elem, 64);
        assert_eq!(c.levels, vec![4, 5]);
        assert_eq!(c.q0.delta, f64::INFINITY);
        assert!(ExperimentConfig::parse("bogus=1").is_err());
        assert!(ExperimentConfig::parse("n_elem").is_err());
        assert!(ExperimentConfig::parse("problem=II\nbeta=0").is_err());
    }

    #[test]
    fn fit_recovers_slope() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let (m, r2) = linear_fit(&x, &y);
        assert!((m - 2.0).abs() < 1e-14 && (r2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn small_identify_writes_csv() {
        let dir = std::env::temp_dir().join(format!("fracident-test-{}", std::process::id()));
        let mut cfg = ExperimentConfig::for_problem(ProblemId::II);
        cfg.n_elem = 64;
        cfg.output_path = Some(dir.join("traj.csv"));
        let out = run_identify(&cfg).unwrap();
        assert!(out.run.converged);
        let text = std::fs::read_to_string(dir.join("traj.csv")).unwrap();
        assert!(text.contains("iter,s,delta,cost,grad_norm,n_evals"));
        assert_eq!(config_from_metadata(&text).unwrap(), cfg);
        let summary = std::fs::read_to_string(dir.join("traj_summary.csv")).unwrap();
        assert!(summary.contains("h,N,s,delta,iterations,evaluations"));
        std::fs::remove_dir_all(dir).ok();
    }
}
