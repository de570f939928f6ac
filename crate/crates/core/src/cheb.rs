//! Chebyshev interpolation in the fractional order: interval subdivision,
//! per-interval orders, and barycentric Lagrange weights with derivatives.

use crate::error::{Error, Result};

pub const DEFAULT_EPS_REG: f64 = 1e-3;
/// Diameter of the default domain `(-1, 1)`, the effective horizon for `δ = ∞`.
pub const DEFAULT_DIAMETER: f64 = 2.0;
pub const XI_GRID_POINTS: usize = 64;
const XI_GRID_MARGIN: f64 = 1e-3;
const MAX_INTERVALS: usize = 100_000;

/// One interval `S_k` with its Chebyshev nodes of the first kind.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebInterval {
    pub s_min: f64,
    pub s_max: f64,
    pub order: usize,
    pub nodes: Vec<f64>,
    bary: Vec<f64>,
}

impl ChebInterval {
    pub fn new(s_min: f64, s_max: f64, order: usize) -> Self {
        let n = order + 1;
        let mid = 0.5 * (s_min + s_max);
        let half = 0.5 * (s_max - s_min);
        let mut nodes = Vec::with_capacity(n);
        let mut bary = Vec::with_capacity(n);
        for m in 0..n {
            let angle = (2 * m + 1) as f64 * std::f64::consts::PI / (2 * n) as f64;
            nodes.push(mid + half * angle.cos());
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            bary.push(sign * angle.sin());
        }
        ChebInterval {
            s_min,
            s_max,
            order,
            nodes,
            bary,
        }
    }

    #[inline]
    pub fn contains(&self, s: f64) -> bool {
        s >= self.s_min && s <= self.s_max
    }

    /// Lagrange weights `Θ_m(s)`; exactly a unit vector at a node.
    pub fn weights(&self, s: f64) -> Vec<f64> {
        if let Some(j) = self.nodes.iter().position(|&x| x == s) {
            let mut out = vec![0.0; self.nodes.len()];
            out[j] = 1.0;
            return out;
        }
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.bary)
            .map(|(x, w)| w / (s - x))
            .collect();
        let total: f64 = terms.iter().sum();
        terms.into_iter().map(|t| t / total).collect()
    }

    /// Derivatives `Θ′_m(s)`, via `p′(s) = Σ_i Θ_i(s) p′(s_i)` and the
    /// barycentric differentiation matrix.
    pub fn derivative_weights(&self, s: f64) -> Vec<f64> {
        let n = self.nodes.len();
        let theta = self.weights(s);
        let mut out = vec![0.0; n];
        for i in 0..n {
            if theta[i] == 0.0 {
                continue;
            }
            let mut diag = 0.0;
            for (j, o) in out.iter_mut().enumerate() {
                if i == j {
                    continue;
                }
                let d = (self.bary[j] / self.bary[i]) / (self.nodes[i] - self.nodes[j]);
                *o += theta[i] * d;
                diag -= d;
            }
            out[i] += theta[i] * diag;
        }
        out
    }
}

/// Subdivision of `[s_min, s_max]` into intervals with interpolation orders.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebSchedule {
    pub s_range: (f64, f64),
    pub xi: f64,
    pub eta: f64,
    pub delta: f64,
    pub eps_reg: f64,
    pub intervals: Vec<ChebInterval>,
}

impl ChebSchedule {
    pub fn orders(&self) -> Vec<usize> {
        self.intervals.iter().map(|iv| iv.order).collect()
    }

    /// `Σ_k (M_k + 1)`.
    pub fn total_nodes(&self) -> usize {
        self.intervals.iter().map(|iv| iv.order + 1).sum()
    }

    /// All nodes, interval by interval.
    pub fn all_nodes(&self) -> Vec<f64> {
        self.intervals
            .iter()
            .flat_map(|iv| iv.nodes.iter().copied())
            .collect()
    }

    /// Global index of the first node of interval `k`.
    pub fn node_offset(&self, k: usize) -> usize {
        self.intervals[..k].iter().map(|iv| iv.order + 1).sum()
    }

    /// Index of the interval containing `s` (the lower one on a shared endpoint).
    pub fn locate(&self, s: f64) -> Result<usize> {
        let (min, max) = self.s_range;
        if !(s >= min && s <= max) {
            return Err(Error::OutsideSchedule { s, min, max });
        }
        Ok(self
            .intervals
            .iter()
            .position(|iv| iv.contains(s))
            .unwrap_or(self.intervals.len() - 1))
    }

    pub fn lagrange_eval(&self, s: f64) -> Result<(usize, Vec<f64>)> {
        let k = self.locate(s)?;
        Ok((k, self.intervals[k].weights(s)))
    }

    pub fn lagrange_deriv(&self, s: f64) -> Result<(usize, Vec<f64>)> {
        let k = self.locate(s)?;
        Ok((k, self.intervals[k].derivative_weights(s)))
    }

    /// Same intervals with every order replaced by `order`.
    pub fn with_uniform_order(&self, order: usize) -> Self {
        let intervals = self
            .intervals
            .iter()
            .map(|iv| ChebInterval::new(iv.s_min, iv.s_max, order))
            .collect();
        ChebSchedule {
            intervals,
            ..self.clone()
        }
    }

    /// Interval bounds and orders as CSV.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,s_min,s_max,order,nodes")?;
        for (k, iv) in self.intervals.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{}",
                k,
                iv.s_min,
                iv.s_max,
                iv.order,
                iv.order + 1
            )?;
        }
        Ok(())
    }
}

/// Contraction factor `σ = (ξ⁻¹ − 2)/8` of the interpolation error per node.
pub fn contraction_factor(xi: f64) -> f64 {
    (1.0 / xi - 2.0) / 8.0
}

/// Interval endpoints `s_min = t_0 < … < t_K = s_max` for a given `ξ`.
pub fn interval_bounds(s_range: (f64, f64), xi: f64, eps_reg: f64) -> Result<Vec<f64>> {
    let (lo, hi) = s_range;
    if !(lo > 0.0 && lo < hi && hi < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "s range [{lo}, {hi}] not inside (0, 1)"
        )));
    }
    if !(xi > 0.1 && xi < 0.5) {
        return Err(Error::InvalidSchedule(format!(
            "xi = {xi} outside (1/10, 1/2)"
        )));
    }
    if !(eps_reg > 0.0 && eps_reg < 0.5) {
        return Err(Error::InvalidSchedule(format!(
            "eps_reg = {eps_reg} outside (0, 1/2)"
        )));
    }
    let mut bounds = vec![lo];
    let mut cur = lo;
    while cur < hi {
        let next = cur + (0.5 - xi) * (1.0 - cur).min(0.5 - eps_reg);
        cur = if next >= hi { hi } else { next };
        bounds.push(cur);
        if bounds.len() > MAX_INTERVALS {
            return Err(Error::InvalidSchedule(format!(
                "more than {MAX_INTERVALS} intervals"
            )));
        }
    }
    Ok(bounds)
}

/// `C_k(δ)` of the interpolation error bound on an interval starting at `s_min_k`.
pub fn error_constant(s_min_k: f64, delta: f64, eps_reg: f64) -> f64 {
    let e_inv = (-1.0f64).exp();
    if delta > 1.0 {
        let g = (1.0 - s_min_k).min(0.5 - eps_reg);
        4.0 * (e_inv + delta.powf(g + 1.0))
    } else {
        4.0 * e_inv
    }
}

/// `M_k = ⌈log(η/C_k) / log σ⌉ − 1`, at least 1.
pub fn interval_order(eta: f64, c_k: f64, xi: f64) -> usize {
    let m = ((eta / c_k).ln() / contraction_factor(xi).ln()).ceil() - 1.0;
    if m.is_finite() && m > 1.0 {
        m as usize
    } else {
        1
    }
}

pub fn build_schedule(s_range: (f64, f64), delta: f64, eta: f64, xi: f64) -> Result<ChebSchedule> {
    build_schedule_with(s_range, delta, eta, xi, DEFAULT_DIAMETER, DEFAULT_EPS_REG)
}

/// As [`build_schedule`] with explicit domain diameter (used for `δ = ∞`) and
/// regularity slack.
pub fn build_schedule_with(
    s_range: (f64, f64),
    delta: f64,
    eta: f64,
    xi: f64,
    diameter: f64,
    eps_reg: f64,
) -> Result<ChebSchedule> {
    if !(eta > 0.0) {
        return Err(Error::InvalidSchedule(format!(
            "eta = {eta} must be positive"
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidHorizon(delta));
    }
    let delta_eff = if delta == f64::INFINITY {
        diameter
    } else {
        delta
    };
    let bounds = interval_bounds(s_range, xi, eps_reg)?;
    let intervals = bounds
        .windows(2)
        .map(|w| {
            let order = interval_order(eta, error_constant(w[0], delta_eff, eps_reg), xi);
            ChebInterval::new(w[0], w[1], order)
        })
        .collect();
    Ok(ChebSchedule {
        s_range,
        xi,
        eta,
        delta,
        eps_reg,
        intervals,
    })
}

/// `ξ` minimizing the total node count over a uniform grid in `(0.1, 0.5)`;
/// ties go to the larger `ξ`.
pub fn optimize_xi(s_range: (f64, f64), delta: f64, eta: f64) -> Result<f64> {
    let lo = 0.1 + XI_GRID_MARGIN;
    let hi = 0.5 - XI_GRID_MARGIN;
    let mut best: Option<(usize, f64)> = None;
    for i in 0..XI_GRID_POINTS {
        let xi = lo + (hi - lo) * i as f64 / (XI_GRID_POINTS - 1) as f64;
        let total = build_schedule(s_range, delta, eta, xi)?.total_nodes();
        if best.is_none_or(|(t, _)| total <= t) {
            best = Some((total, xi));
        }
    }
    Ok(best.map(|(_, xi)| xi).expect("non-empty grid"))
}
