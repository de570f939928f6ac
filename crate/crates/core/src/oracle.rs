//! Reference quantities: the closed-form solution of the fractional Poisson
//! problem with unit forcing, a brute-force evaluation of stiffness entries,
//! seeded noise, and central finite differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::gamma::gamma;

use crate::assembly::ParamPoint;
use crate::error::{Error, Result};
use crate::mesh::{FieldVector, Mesh1D};
use crate::opfamily::KernelScaling;

pub const BRUTE_FORCE_MAX_ELEMENTS: usize = 16;
const GK_MAX_PIECES: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemId {
    /// Fractional Laplacian with unit forcing; closed-form solution.
    I,
    /// Truncated kernel `½|x − y|^{−1−2s}` with unit forcing; data from a
    /// discrete solve at the generating parameters.
    II,
}

impl std::str::FromStr for ProblemId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "1" | "i" => Ok(ProblemId::I),
            "II" | "2" | "ii" => Ok(ProblemId::II),
            other => Err(Error::Config(format!("unknown problem '{other}'"))),
        }
    }
}

impl std::fmt::Display for ProblemId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProblemId::I => "I",
            ProblemId::II => "II",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestProblem {
    pub id: ProblemId,
    pub s_star: f64,
    pub delta_star: f64,
    pub scaling: KernelScaling,
}

impl TestProblem {
    pub fn problem_i(s_star: f64) -> Self {
        TestProblem {
            id: ProblemId::I,
            s_star,
            delta_star: f64::INFINITY,
            scaling: KernelScaling::FractionalLaplacian,
        }
    }

    pub fn problem_ii(s_star: f64, delta_star: f64) -> Self {
        TestProblem {
            id: ProblemId::II,
            s_star,
            delta_star,
            scaling: KernelScaling::Half,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.id {
            ProblemId::I if self.delta_star != f64::INFINITY => {
                Err(Error::Config("problem I has an infinite horizon".into()))
            }
            ProblemId::II if !self.delta_star.is_finite() => {
                Err(Error::Config("problem II needs a finite horizon".into()))
            }
            _ => ParamPoint::new(self.s_star, self.delta_star).map(|_| ()),
        }
    }

    /// The forcing, identically one.
    pub fn forcing(&self, _x: f64) -> f64 {
        1.0
    }
}

/// `C_{n,s} = 2^{2s} s Γ(s + n/2) / (π^{n/2} Γ(1 − s))`.
pub fn scaling_constant(n: usize, s: f64) -> f64 {
    let half_n = n as f64 / 2.0;
    4f64.powf(s) * s * gamma(s + half_n) / (std::f64::consts::PI.powf(half_n) * gamma(1.0 - s))
}

/// `c_{n,s} = Γ(n/2) / (2^{2s} Γ((n + 2s)/2) Γ(1 + s))`.
pub fn getoor_constant(n: usize, s: f64) -> f64 {
    let half_n = n as f64 / 2.0;
    gamma(half_n) / (4f64.powf(s) * gamma(half_n + s) * gamma(1.0 + s))
}

/// `x ↦ c_{1,s} (1 − x²)_+^s`, the solution of `(−Δ)^s u = 1` on `(−1, 1)`.
pub fn getoor_solution(s: f64) -> impl Fn(f64) -> f64 + Copy {
    let c = getoor_constant(1, s);
    move |x: f64| {
        let r = 1.0 - x * x;
        if r > 0.0 {
            c * r.powf(s)
        } else {
            0.0
        }
    }
}

/// `∫_{−1}^{1} u_ex = c_{1,s} √π Γ(s + 1) / Γ(s + 3/2)`.
pub fn getoor_integral(s: f64) -> f64 {
    getoor_constant(1, s) * std::f64::consts::PI.sqrt() * gamma(s + 1.0) / gamma(s + 1.5)
}

/// 7-point Gauss / 15-point Kronrod pair on [-1, 1].
#[allow(clippy::excessive_precision)]
const GK_NODES: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
#[allow(clippy::excessive_precision)]
const K_WEIGHTS: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
#[allow(clippy::excessive_precision)]
const G_WEIGHTS: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: FnMut(f64) -> f64>(a: f64, b: f64, f: &mut F) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let fc = f(c);
    let mut k = K_WEIGHTS[7] * fc;
    let mut g = G_WEIGHTS[3] * fc;
    for i in 0..7 {
        let f1 = f(c - r * GK_NODES[i]);
        let f2 = f(c + r * GK_NODES[i]);
        k += K_WEIGHTS[i] * (f1 + f2);
        if i % 2 == 1 {
            g += G_WEIGHTS[i / 2] * (f1 + f2);
        }
    }
    (k * r, ((k - g) * r).abs())
}

/// Globally adaptive Gauss–Kronrod quadrature: the subinterval with the
/// largest error estimate is bisected until the summed estimate is below the
/// absolute tolerance `tol`.
pub fn adaptive_integrate<F: FnMut(f64) -> f64>(a: f64, b: f64, tol: f64, mut f: F) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let (v, e) = gk15(a, b, &mut f);
    let mut pieces = vec![(a, b, v, e)];
    loop {
        let total_err: f64 = pieces.iter().map(|p| p.3).sum();
        if total_err <= tol {
            return Ok(pieces.iter().map(|p| p.2).sum());
        }
        if pieces.len() >= GK_MAX_PIECES {
            return Err(Error::QuadratureFailed {
                tol,
                estimate: total_err,
            });
        }
        let worst = (0..pieces.len())
            .max_by(|&x, &y| pieces[x].3.partial_cmp(&pieces[y].3).unwrap())
            .unwrap();
        let (lo, hi, _, _) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            return Err(Error::QuadratureFailed {
                tol,
                estimate: total_err,
            });
        }
        let (v1, e1) = gk15(lo, mid, &mut f);
        let (v2, e2) = gk15(mid, hi, &mut f);
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
    }
}

// hat function of interior dof `i` (node i + 1)
fn hat(mesh: &Mesh1D, i: usize, x: f64) -> f64 {
    let xi = mesh.dof_coord(i);
    (1.0 - (x - xi).abs() / mesh.h).max(0.0)
}

/// `a(φ_i, φ_j; q)` of the unscaled kernel by adaptive quadrature, written as
/// `2∫_0^{min(δ, L)} t^{−1−2s} G(t) dt` over the offset `t = x − y` inside the
/// domain (with `G` integrated exactly piece by piece) plus the exterior term
/// `2∫_Ω φ_i φ_j(x) ∫_{y∉Ω, |x−y|<δ} |x − y|^{−1−2s} dy dx`.
pub fn brute_force_entry(mesh: &Mesh1D, i: usize, j: usize, q: ParamPoint) -> Result<f64> {
    if mesh.n_elem > BRUTE_FORCE_MAX_ELEMENTS {
        return Err(Error::InvalidMesh(format!(
            "brute force limited to {BRUTE_FORCE_MAX_ELEMENTS} elements"
        )));
    }
    let n = mesh.n_dofs();
    if i >= n || j >= n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: i.max(j) + 1,
        });
    }
    let ParamPoint { s, delta } = q;
    let (a, b, h) = (mesh.a, mesh.b, mesh.h);
    let tol = 1e-9;

    let diff = |x: f64, t: f64, k: usize| hat(mesh, k, x) - hat(mesh, k, x - t);
    // G(t) = ∫_{x∈Ω, x−t∈Ω} (φ_i(x) − φ_i(x−t)) (φ_j(x) − φ_j(x−t)) dx, exact:
    // the integrand is piecewise quadratic with knots at nodes and nodes + t
    let rule = crate::quad::gauss_legendre(3);
    let g_of_t = |t: f64| -> f64 {
        let lo = a + t;
        let hi = b;
        let mut knots: Vec<f64> = mesh
            .nodes
            .iter()
            .flat_map(|&x| [x, x + t])
            .filter(|&x| x > lo && x < hi)
            .collect();
        knots.push(lo);
        knots.push(hi);
        knots.sort_by(|p, q| p.partial_cmp(q).unwrap());
        knots
            .windows(2)
            .map(|w| rule.integrate(w[0], w[1], |x| diff(x, t, i) * diff(x, t, j)))
            .sum()
    };
    let t_max = delta.min(b - a);
    let p = -1.0 - 2.0 * s;
    let mut inner = 0.0;
    // G is piecewise polynomial in t with kinks at multiples of h
    let mut lo = 0.0;
    while lo < t_max {
        let hi = (lo + h).min(t_max);
        inner += adaptive_integrate(lo, hi, tol, |t| {
            if t > 0.0 {
                t.powf(p) * g_of_t(t)
            } else {
                0.0
            }
        })?;
        lo = hi;
    }

    let ext = |x: f64| -> f64 {
        let tail = |r: f64| {
            if r >= delta {
                0.0
            } else if delta == f64::INFINITY {
                r.powf(-2.0 * s) / (2.0 * s)
            } else {
                (r.powf(-2.0 * s) - delta.powf(-2.0 * s)) / (2.0 * s)
            }
        };
        tail(x - a) + tail(b - x)
    };
    let mut outer = 0.0;
    let mut breaks: Vec<f64> = mesh.nodes.clone();
    if delta.is_finite() {
        breaks.extend([a + delta, b - delta].iter().filter(|&&x| x > a && x < b));
    }
    breaks.sort_by(|p, q| p.partial_cmp(q).unwrap());
    breaks.dedup();
    for w in breaks.windows(2) {
        outer += adaptive_integrate(w[0], w[1], tol, |x| {
            hat(mesh, i, x) * hat(mesh, j, x) * ext(x)
        })?;
    }
    Ok(2.0 * inner + 2.0 * outer)
}

/// Adds i.i.d. `N(0, σ²)` noise to every coefficient, from a ChaCha8 stream
/// seeded with `seed`.
pub fn add_noise(u_d: &FieldVector, sigma: f64, seed: u64) -> Result<FieldVector> {
    if !(sigma >= 0.0) {
        return Err(Error::Config(format!(
            "noise level {sigma} must be nonnegative"
        )));
    }
    if sigma == 0.0 {
        return Ok(u_d.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let coeffs = u_d
        .coeffs
        .iter()
        .map(|v| v + normal.sample(&mut rng))
        .collect();
    FieldVector::new(u_d.mesh.clone(), coeffs)
}

/// Central finite differences of `cost` at `q`. If a stencil point is rejected
/// as infeasible the step is shrunk tenfold once before giving up.
pub fn fd_gradient<F>(mut cost: F, q: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut out = Vec::with_capacity(q.len());
    for i in 0..q.len() {
        let mut h = step;
        let mut attempt = 0;
        loop {
            let mut qp = q.to_vec();
            let mut qm = q.to_vec();
            qp[i] += h;
            qm[i] -= h;
            match (cost(&qp), cost(&qm)) {
                (Ok(fp), Ok(fm)) => {
                    out.push((fp - fm) / (2.0 * h));
                    break;
                }
                (
                    Err(
                        e @ (Error::Infeasible(_)
                        | Error::OutsideSchedule { .. }
                        | Error::OrderOutOfRange(_)
                        | Error::InvalidHorizon(_)),
                    ),
                    _,
                )
                | (
                    _,
                    Err(
                        e @ (Error::Infeasible(_)
                        | Error::OutsideSchedule { .. }
                        | Error::OrderOutOfRange(_)
                        | Error::InvalidHorizon(_)),
                    ),
                ) => {
                    if attempt == 1 {
                        return Err(e);
                    }
                    attempt += 1;
                    h /= 10.0;
                }
                (Err(e), _) | (_, Err(e)) => return Err(e),
            }
        }
    }
    Ok(out)
}
