//! Stiffness matrices of the truncated fractional kernel `|x − y|^{−1−2s}`.
//!
//! On a uniform mesh with zero extension every bilinear form here is
//! translation invariant, so the matrices are symmetric Toeplitz and only the
//! first column is computed. With `P(x) = h B(x/h)` the overlap of two hats at
//! offset `x` (`B` the centered cubic B-spline), the entries reduce to
//! one-dimensional integrals in the offset variable `τ = t/h`:
//!
//! * infinite horizon: `h^{1−2s} · (−2) ∫ B(τ − k) |τ|^{−1−2s} dτ` (finite
//!   part), in closed form for small `k`;
//! * truncated horizon: `2 h^{1−2s} ∫_0^{δ/h} τ^{−1−2s} (2B(k) − B(k−τ) − B(k+τ)) dτ`;
//! * correction: `−2 δ^{−2s}/s · M + 2 h^{1−2s} ∫_{|τ|>δ/h} B(τ − k) |τ|^{−1−2s} dτ`.
//!
//! The kernel is used without any normalizing constant; callers scale.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{mass_matrix, Mesh1D};
use crate::quad::integrate_away_from_origin;
use crate::toeplitz::SymToeplitz;

// offsets up to this use the closed-form finite-part formula
const CLOSED_FORM_MAX: usize = 2;

/// Control parameter `q = (s, δ)`; `δ = ∞` is the fractional Laplacian limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamPoint {
    pub s: f64,
    pub delta: f64,
}

impl ParamPoint {
    pub fn new(s: f64, delta: f64) -> Result<Self> {
        check_order(s)?;
        if !(delta > 0.0) {
            return Err(Error::InvalidHorizon(delta));
        }
        Ok(ParamPoint { s, delta })
    }

    pub fn infinite(s: f64) -> Result<Self> {
        Self::new(s, f64::INFINITY)
    }

    #[inline]
    pub fn is_infinite(&self) -> bool {
        self.delta == f64::INFINITY
    }
}

impl std::fmt::Display for ParamPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(s={}, delta={})", self.s, self.delta)
    }
}

pub(crate) fn check_order(s: f64) -> Result<()> {
    if s > 0.0 && s < 1.0 {
        Ok(())
    } else {
        Err(Error::OrderOutOfRange(s))
    }
}

fn check_finite_horizon(delta: f64) -> Result<()> {
    if delta == f64::INFINITY {
        Err(Error::InfiniteHorizon)
    } else if !(delta > 0.0) || delta.is_nan() {
        Err(Error::InvalidHorizon(delta))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Full,
    InfiniteHorizon,
    Correction,
    SDerivative,
    SDerivativeCorrection,
    DeltaDerivative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StiffnessMatrix {
    pub entries: SymToeplitz,
    pub param: ParamPoint,
    pub kind: MatrixKind,
}

impl StiffnessMatrix {
    pub fn n(&self) -> usize {
        self.entries.n()
    }

    /// Dense dump, row-major, one row per line.
    pub fn write_dense<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        self.entries.write_dense(out)
    }
}

/// Gauss orders for the offset integrals. Pieces within a few lengths of the
/// kernel singularity use `singular_order`; farther pieces use
/// `regular_order_base`, reduced by one per doubling of the distance when
/// `distance_decay` is set, but never below `decay_floor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    pub singular_order: usize,
    pub regular_order_base: usize,
    pub distance_decay: bool,
    pub decay_floor: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            singular_order: 10,
            regular_order_base: 6,
            distance_decay: true,
            decay_floor: 3,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        let min = self
            .singular_order
            .min(self.regular_order_base)
            .min(self.decay_floor);
        let max = self.singular_order.max(self.regular_order_base);
        if min < 2 || max > 64 {
            return Err(Error::Config(format!(
                "quadrature orders must lie in [2, 64]: {self:?}"
            )));
        }
        Ok(())
    }

    /// Order for a piece whose distance to the singularity is `ratio` times its
    /// length.
    pub fn order_for(&self, ratio: f64) -> usize {
        if ratio < 3.0 {
            return self.singular_order;
        }
        if !self.distance_decay {
            return self.regular_order_base;
        }
        let drop = (ratio / 3.0).log2().floor().max(0.0) as usize;
        self.regular_order_base
            .saturating_sub(drop)
            .max(self.decay_floor)
    }
}

/// Centered cubic B-spline, the autocorrelation of the unit hat; `∫B = 1`.
#[inline]
pub fn bspline(t: f64) -> f64 {
    let t = t.abs();
    if t < 1.0 {
        2.0 / 3.0 - t * t + 0.5 * t * t * t
    } else if t < 2.0 {
        let u = 2.0 - t;
        u * u * u / 6.0
    } else {
        0.0
    }
}

/// Overlap `∫ φ_i(x) φ_j(x + d) dx` of two hats whose centers are `d` apart.
#[inline]
fn hat_overlap(h: f64, d: f64) -> f64 {
    h * bspline(d / h)
}

// Antiderivative kernel whose fourth difference gives the finite-part integral
// of B(τ − k)|τ|^{−1−2s}; even in t, zero at t = 0.
fn finite_part_kernel(t: f64, s: f64) -> f64 {
    let t = t.abs();
    if t == 0.0 {
        return 0.0;
    }
    let e = 1.0 - 2.0 * s;
    let l = t.ln();
    let g = if e == 0.0 { l } else { (e * l).exp_m1() / e };
    t * t * g / ((-2.0 * s) * (2.0 - 2.0 * s) * (3.0 - 2.0 * s))
}

/// Column entry `k` of `A(s, ∞)` for `h = 1`.
fn infinite_entry_unit(k: usize, s: f64, quad: &QuadratureConfig) -> f64 {
    if k <= CLOSED_FORM_MAX {
        const C: [f64; 5] = [1.0, -4.0, 6.0, -4.0, 1.0];
        let kf = k as f64;
        let diff: f64 = (0..5)
            .map(|m| C[m] * finite_part_kernel(kf + m as f64 - 2.0, s))
            .sum();
        return -2.0 * diff;
    }
    // |τ| ≥ 1 on the support, so plain (graded) Gauss suffices
    -2.0 * kernel_moment(k, 0.0, s, quad, |_| 1.0)
}

/// `∫_{|τ|>lower} B(τ − k) |τ|^{−1−2s} w(|τ|) dτ`, split at the spline knots
/// and at `±lower`.
fn kernel_moment<W: Fn(f64) -> f64>(
    k: usize,
    lower: f64,
    s: f64,
    quad: &QuadratureConfig,
    w: W,
) -> f64 {
    let kf = k as f64;
    let p = -1.0 - 2.0 * s;
    let mut acc = 0.0;
    for j in 0..4 {
        let lo = kf - 2.0 + j as f64;
        let hi = lo + 1.0;
        // positive half line, τ in [max(lo, lower), hi]
        let a = lo.max(lower).max(0.0);
        if hi > a {
            acc += piece(a, hi, quad, |t| bspline(t - kf) * t.powf(p) * w(t));
        }
        // negative half line, τ = −u with u in [max(−hi, lower), −lo]
        let a = (-hi).max(lower).max(0.0);
        if -lo > a {
            acc += piece(a, -lo, quad, |u| bspline(-u - kf) * u.powf(p) * w(u));
        }
    }
    acc
}

// Integral over [a, b] with 0 ≤ a < b of an integrand that is smooth away from
// the origin. A piece touching the origin is never requested with a singular
// integrand (those are handled in closed form).
fn piece<F: FnMut(f64) -> f64>(a: f64, b: f64, quad: &QuadratureConfig, f: F) -> f64 {
    debug_assert!(a > 0.0, "singular piece requested at the origin");
    integrate_away_from_origin(a, b, |r| quad.order_for(r), f)
}

/// Infinite-horizon stiffness matrix `A(s, ∞)`.
pub fn assemble_infinite(
    mesh: &Mesh1D,
    s: f64,
    quad: &QuadratureConfig,
) -> Result<StiffnessMatrix> {
    check_order(s)?;
    quad.validate()?;
    let scale = mesh.h.powf(1.0 - 2.0 * s);
    let col: Vec<f64> = (0..mesh.n_dofs())
        .into_par_iter()
        .map(|k| scale * infinite_entry_unit(k, s, quad))
        .collect();
    Ok(StiffnessMatrix {
        entries: SymToeplitz::new(col),
        param: ParamPoint {
            s,
            delta: f64::INFINITY,
        },
        kind: MatrixKind::InfiniteHorizon,
    })
}

// Far-field column `2 h^{1−2s} ∫_{|τ|>δ/h} B(τ − k) |τ|^{−1−2s} w dτ`,
// identically zero when δ ≥ diam Ω.
fn far_field<W: Fn(f64) -> f64 + Sync>(
    mesh: &Mesh1D,
    s: f64,
    delta: f64,
    quad: &QuadratureConfig,
    w: W,
) -> Vec<f64> {
    let n = mesh.n_dofs();
    if delta >= mesh.diameter() {
        return vec![0.0; n];
    }
    let d = delta / mesh.h;
    let scale = 2.0 * mesh.h.powf(1.0 - 2.0 * s);
    (0..n)
        .into_par_iter()
        .map(|k| {
            // support of B(τ − k) is [k − 2, k + 2]
            if (k as f64) + 2.0 <= d && 2.0 - (k as f64) <= d {
                0.0
            } else {
                scale * kernel_moment(k, d, s, quad, &w)
            }
        })
        .collect()
}

/// Correction `C(s, δ) = A(s, δ) − A(s, ∞)`.
pub fn assemble_correction(
    mesh: &Mesh1D,
    s: f64,
    delta: f64,
    quad: &QuadratureConfig,
) -> Result<StiffnessMatrix> {
    check_order(s)?;
    check_finite_horizon(delta)?;
    quad.validate()?;
    let mut col = far_field(mesh, s, delta, quad, |_| 1.0);
    let mass = mass_matrix(mesh);
    let coef = -2.0 * delta.powf(-2.0 * s) / s;
    for (c, m) in col.iter_mut().zip(mass.col()) {
        *c += coef * m;
    }
    Ok(StiffnessMatrix {
        entries: SymToeplitz::new(col),
        param: ParamPoint { s, delta },
        kind: MatrixKind::Correction,
    })
}

/// `∂_s C(s, δ)`.
pub fn assemble_s_derivative_correction(
    mesh: &Mesh1D,
    q: ParamPoint,
    quad: &QuadratureConfig,
) -> Result<StiffnessMatrix> {
    let ParamPoint { s, delta } = q;
    check_order(s)?;
    check_finite_horizon(delta)?;
    quad.validate()?;
    let ln_h = mesh.h.ln();
    let mut col = far_field(mesh, s, delta, quad, |t| ln_h + t.ln());
    for c in col.iter_mut() {
        *c *= -2.0;
    }
    let mass = mass_matrix(mesh);
    let coef = 2.0 * delta.powf(-2.0 * s) * (1.0 + 2.0 * s * delta.ln()) / (s * s);
    for (c, m) in col.iter_mut().zip(mass.col()) {
        *c += coef * m;
    }
    Ok(StiffnessMatrix {
        entries: SymToeplitz::new(col),
        param: q,
        kind: MatrixKind::SDerivativeCorrection,
    })
}

/// `∂_δ A(s, δ)`, exact: `4 δ^{−1−2s} (u, v − v̄)` with `v̄` the mean of the
/// shifts `v(x ± δ)` (zero extended).
pub fn assemble_delta_derivative(mesh: &Mesh1D, q: ParamPoint) -> Result<StiffnessMatrix> {
    let ParamPoint { s, delta } = q;
    check_order(s)?;
    check_finite_horizon(delta)?;
    let h = mesh.h;
    let coef = 4.0 * delta.powf(-1.0 - 2.0 * s);
    let col = (0..mesh.n_dofs())
        .map(|k| {
            let x = k as f64 * h;
            let shifted = if delta >= mesh.diameter() {
                0.0
            } else {
                0.5 * (hat_overlap(h, x + delta) + hat_overlap(h, x - delta))
            };
            coef * (hat_overlap(h, x) - shifted)
        })
        .collect();
    Ok(StiffnessMatrix {
        entries: SymToeplitz::new(col),
        param: q,
        kind: MatrixKind::DeltaDerivative,
    })
}

/// `A(s, δ)` assembled directly over the strip `|x − y| < δ`, without the
/// infinite-horizon/correction splitting. Cross-validation path.
pub fn assemble_truncated_direct(
    mesh: &Mesh1D,
    q: ParamPoint,
    quad: &QuadratureConfig,
) -> Result<StiffnessMatrix> {
    let ParamPoint { s, delta } = q;
    check_order(s)?;
    check_finite_horizon(delta)?;
    quad.validate()?;
    let d = delta / mesh.h;
    let scale = 2.0 * mesh.h.powf(1.0 - 2.0 * s);
    let col = (0..mesh.n_dofs())
        .into_par_iter()
        .map(|k| scale * strip_integral_unit(k, d, s, quad))
        .collect();
    Ok(StiffnessMatrix {
        entries: SymToeplitz::new(col),
        param: q,
        kind: MatrixKind::Full,
    })
}

// ∫_0^D τ^{−1−2s} g_k(τ) dτ with g_k(τ) = 2B(k) − B(k − τ) − B(k + τ).
fn strip_integral_unit(k: usize, d: f64, s: f64, quad: &QuadratureConfig) -> f64 {
    let kf = k as f64;
    let g = |t: f64| 2.0 * bspline(kf) - bspline(kf - t) - bspline(kf + t);
    let p = -1.0 - 2.0 * s;
    // on [0, 1] g_k is c2 τ² + c3 τ³ (even, C², no knots inside)
    let g1 = g(1.0);
    let c2 = 8.0 * g(0.5) - g1;
    let c3 = g1 - c2;
    let lam = d.min(1.0);
    let mut acc = c2 * lam.powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s)
        + c3 * lam.powf(3.0 - 2.0 * s) / (3.0 - 2.0 * s);
    let top = kf + 2.0;
    let mut lo = 1.0;
    while lo < d && lo < top {
        let hi = (lo + 1.0).min(d);
        acc += piece(lo, hi, quad, |t| t.powf(p) * g(t));
        lo += 1.0;
    }
    if d > top {
        // g_k is the constant 2B(k) beyond the support
        let tail = if d == f64::INFINITY {
            top.powf(-2.0 * s) / (2.0 * s)
        } else {
            (top.powf(-2.0 * s) - d.powf(-2.0 * s)) / (2.0 * s)
        };
        acc += 2.0 * bspline(kf) * tail;
    }
    acc
}
