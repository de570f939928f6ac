//! Gauss–Legendre rules and the graded composite rule used for integrands with a
//! point singularity at the origin.

use std::sync::OnceLock;

const MAX_ORDER: usize = 64;

/// Nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    fn compute(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussRule { nodes, weights }
    }

    /// Integrates `f` over `[a, b]`.
    #[inline]
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let c = 0.5 * (a + b);
        let r = 0.5 * (b - a);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(c + r * x);
        }
        acc * r
    }
}

/// Legendre polynomial P_n(x) and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Cached Gauss–Legendre rule with `n` points (`1 <= n <= 64`).
pub fn gauss_legendre(n: usize) -> &'static GaussRule {
    static RULES: OnceLock<Vec<OnceLock<GaussRule>>> = OnceLock::new();
    assert!(
        (1..=MAX_ORDER).contains(&n),
        "Gauss order {n} not supported"
    );
    let rules = RULES.get_or_init(|| (0..=MAX_ORDER).map(|_| OnceLock::new()).collect());
    rules[n].get_or_init(|| GaussRule::compute(n))
}

/// Splits `[a, b]` (with `0 < a < b`) into pieces `[c, d]` satisfying
/// `d - c <= c / 2`, so that a singularity at the origin is at least two
/// piece-lengths away from every piece.
pub fn graded_pieces(a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    debug_assert!(a > 0.0 && b > a);
    let mut lo = a;
    std::iter::from_fn(move || {
        if lo >= b {
            return None;
        }
        let hi = (1.5 * lo).min(b);
        // avoid a sliver at the end
        let hi = if b - hi < 0.25 * (hi - lo) { b } else { hi };
        let piece = (lo, hi);
        lo = hi;
        Some(piece)
    })
}

/// Integrates `f` over `[a, b]` with `0 < a < b`, where `f` may be singular at
/// the origin. `order_for(ratio)` picks the Gauss order for a piece whose
/// distance to the origin is `ratio` times its length.
pub fn integrate_away_from_origin<F, O>(a: f64, b: f64, order_for: O, mut f: F) -> f64
where
    F: FnMut(f64) -> f64,
    O: Fn(f64) -> usize,
{
    let mut acc = 0.0;
    for (lo, hi) in graded_pieces(a, b) {
        let rule = gauss_legendre(order_for(lo / (hi - lo)));
        acc += rule.integrate(lo, hi, &mut f);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exactness() {
        for n in 1..=20 {
            let rule = gauss_legendre(n);
            let deg = 2 * n - 1;
            let num = rule.integrate(0.0, 1.0, |x| x.powi(deg as i32));
            assert!((num - 1.0 / (deg as f64 + 1.0)).abs() < 1e-14, "n={n}");
        }
    }

    #[test]
    fn weights_sum_to_two() {
        for n in [1, 3, 10, 33, 64] {
            let s: f64 = gauss_legendre(n).weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn graded_rule_handles_near_singularity() {
        // \int_{1e-6}^{1} x^{-1.5} dx
        let exact = 2.0 * (1e-6f64.powf(-0.5) - 1.0);
        let num = integrate_away_from_origin(1e-6, 1.0, |_| 12, |x| x.powf(-1.5));
        assert!(((num - exact) / exact).abs() < 1e-13);
    }

    #[test]
    fn graded_pieces_tile() {
        let pieces: Vec<_> = graded_pieces(0.3, 7.0).collect();
        assert_eq!(pieces.first().unwrap().0, 0.3);
        assert_eq!(pieces.last().unwrap().1, 7.0);
        for w in pieces.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
        for (lo, hi) in pieces {
            assert!(hi - lo <= 0.5 * lo * 1.25 + 1e-15);
        }
    }
}
