//! Affine operator family: infinite-horizon matrices precomputed at the
//! Chebyshev nodes of a schedule, combined with an on-demand finite-horizon
//! correction, `Ã(s, δ) = κ(s)·(Σ_m Θ_m(s) A(s_m, ∞)) + κ(s) C(s, δ)`, with
//! the node matrices stored already multiplied by `κ(s_m)`.

use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use lru::LruCache;
use rayon::prelude::*;
use statrs::function::gamma::{digamma, gamma};

use crate::assembly::{
    assemble_correction, assemble_delta_derivative, assemble_infinite,
    assemble_s_derivative_correction, check_order, MatrixKind, ParamPoint, QuadratureConfig,
    StiffnessMatrix,
};
use crate::cheb::ChebSchedule;
use crate::error::{Error, Result};
use crate::mesh::{mass_matrix, Mesh1D};
use crate::toeplitz::{dot, SymToeplitz, ToeplitzInverse};

pub const CACHE_CAPACITY: usize = 64;

/// Constant `κ(s)` multiplying the kernel `|x − y|^{−1−2s}` in the bilinear
/// form `κ ∫∫_{|x−y|<δ} (u(x) − u(y))(v(x) − v(y)) |x − y|^{−1−2s}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelScaling {
    /// `κ = 1`.
    Unit,
    /// `κ = 1/2`, the kernel `½|x − y|^{−1−2s}`.
    Half,
    /// `κ = C_{1,s}/2`: the weak form of the fractional Laplacian `(−Δ)^s`.
    FractionalLaplacian,
}

impl KernelScaling {
    pub fn factor(&self, s: f64) -> f64 {
        match self {
            KernelScaling::Unit => 1.0,
            KernelScaling::Half => 0.5,
            KernelScaling::FractionalLaplacian => 0.5 * fractional_laplacian_constant(s),
        }
    }

    /// `dκ/ds`.
    pub fn derivative(&self, s: f64) -> f64 {
        match self {
            KernelScaling::Unit | KernelScaling::Half => 0.0,
            KernelScaling::FractionalLaplacian => {
                let log_deriv =
                    2.0 * std::f64::consts::LN_2 + 1.0 / s + digamma(s + 0.5) + digamma(1.0 - s);
                self.factor(s) * log_deriv
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelScaling::Unit => "unit",
            KernelScaling::Half => "half",
            KernelScaling::FractionalLaplacian => "fractional-laplacian",
        }
    }
}

impl std::str::FromStr for KernelScaling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(KernelScaling::Unit),
            "half" => Ok(KernelScaling::Half),
            "fractional-laplacian" => Ok(KernelScaling::FractionalLaplacian),
            other => Err(Error::Config(format!("unknown kernel scaling '{other}'"))),
        }
    }
}

/// `C_{1,s} = 2^{2s} s Γ(s + 1/2) / (√π Γ(1 − s))`.
pub fn fractional_laplacian_constant(s: f64) -> f64 {
    4f64.powf(s) * s * gamma(s + 0.5) / (std::f64::consts::PI.sqrt() * gamma(1.0 - s))
}

/// Wall-clock measurement of one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub phase: String,
    pub n: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FamilyStats {
    pub correction_assemblies: usize,
    pub cache_hits: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct CacheKey {
    s: u64,
    delta: u64,
    kind: CachedKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum CachedKind {
    Correction,
    SDerivative,
    DeltaDerivative,
}

pub struct OperatorFamily {
    pub mesh: Arc<Mesh1D>,
    pub schedule: ChebSchedule,
    pub quad: QuadratureConfig,
    pub scaling: KernelScaling,
    pub mass: SymToeplitz,
    /// `κ(s_m) A(s_m, ∞)` for every schedule node, interval by interval.
    pub node_matrices: Vec<SymToeplitz>,
    cache: Mutex<LruCache<CacheKey, Arc<StiffnessMatrix>>>,
    assemblies: AtomicUsize,
    hits: AtomicUsize,
    timings: Mutex<Vec<TimingRow>>,
}

impl std::fmt::Debug for OperatorFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorFamily")
            .field("n_dofs", &self.mesh.n_dofs())
            .field("nodes", &self.node_matrices.len())
            .field("scaling", &self.scaling)
            .finish()
    }
}

impl OperatorFamily {
    /// Assembles the node matrices (in parallel over nodes).
    pub fn precompute(
        mesh: Arc<Mesh1D>,
        schedule: ChebSchedule,
        quad: QuadratureConfig,
        scaling: KernelScaling,
    ) -> Result<Self> {
        let start = Instant::now();
        let nodes = schedule.all_nodes();
        let node_matrices = nodes
            .par_iter()
            .map(|&s| {
                let a = assemble_infinite(&mesh, s, &quad)?;
                Ok(a.entries.scaled(scaling.factor(s)))
            })
            .collect::<Result<Vec<_>>>()?;
        let seconds = start.elapsed().as_secs_f64();
        let mass = mass_matrix(&mesh);
        let n = mesh.n_dofs();
        Ok(OperatorFamily {
            mesh,
            schedule,
            quad,
            scaling,
            mass,
            node_matrices,
            cache: Mutex::new(LruCache::new(NonZeroUsize::new(CACHE_CAPACITY).unwrap())),
            assemblies: AtomicUsize::new(0),
            hits: AtomicUsize::new(0),
            timings: Mutex::new(vec![TimingRow {
                phase: "precompute".into(),
                n,
                seconds,
            }]),
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_dofs()
    }

    pub fn stats(&self) -> FamilyStats {
        FamilyStats {
            correction_assemblies: self.assemblies.load(Ordering::Relaxed),
            cache_hits: self.hits.load(Ordering::Relaxed),
        }
    }

    pub fn timings(&self) -> Vec<TimingRow> {
        self.timings.lock().unwrap().clone()
    }

    fn combine(&self, k: usize, weights: &[f64]) -> SymToeplitz {
        let offset = self.schedule.node_offset(k);
        let mats = &self.node_matrices[offset..offset + weights.len()];
        if let Some(j) = weights.iter().position(|&w| w == 1.0) {
            if weights.iter().enumerate().all(|(m, &w)| m == j || w == 0.0) {
                return mats[j].clone();
            }
        }
        let mut out = SymToeplitz::zeros(self.n_dofs());
        for (w, a) in weights.iter().zip(mats) {
            if *w != 0.0 {
                out.axpy(*w, a);
            }
        }
        out
    }

    fn check(&self, q: &ParamPoint) -> Result<()> {
        check_order(q.s)?;
        if !(q.delta > 0.0) {
            return Err(Error::InvalidHorizon(q.delta));
        }
        Ok(())
    }

    fn cached<F>(&self, q: ParamPoint, kind: CachedKind, build: F) -> Result<Arc<StiffnessMatrix>>
    where
        F: FnOnce() -> Result<StiffnessMatrix>,
    {
        let key = CacheKey {
            s: q.s.to_bits(),
            delta: q.delta.to_bits(),
            kind,
        };
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.clone());
        }
        let start = Instant::now();
        let m = Arc::new(build()?);
        let seconds = start.elapsed().as_secs_f64();
        self.assemblies.fetch_add(1, Ordering::Relaxed);
        let phase = match kind {
            CachedKind::Correction => "correction",
            CachedKind::SDerivative => "correction_ds",
            CachedKind::DeltaDerivative => "correction_ddelta",
        };
        self.timings.lock().unwrap().push(TimingRow {
            phase: phase.into(),
            n: self.n_dofs(),
            seconds,
        });
        self.cache.lock().unwrap().put(key, m.clone());
        Ok(m)
    }

    /// `κ(s) C(s, δ)`, memoized on the exact parameter bits.
    pub fn correction(&self, q: ParamPoint) -> Result<Arc<StiffnessMatrix>> {
        self.check(&q)?;
        self.cached(q, CachedKind::Correction, || {
            let mut c = assemble_correction(&self.mesh, q.s, q.delta, &self.quad)?;
            c.entries = c.entries.scaled(self.scaling.factor(q.s));
            Ok(c)
        })
    }

    /// `∂_s (κ(s) C(s, δ))`.
    pub fn correction_ds(&self, q: ParamPoint) -> Result<Arc<StiffnessMatrix>> {
        self.check(&q)?;
        self.cached(q, CachedKind::SDerivative, || {
            let mut d = assemble_s_derivative_correction(&self.mesh, q, &self.quad)?;
            d.entries = d.entries.scaled(self.scaling.factor(q.s));
            let dk = self.scaling.derivative(q.s);
            if dk != 0.0 {
                let c = assemble_correction(&self.mesh, q.s, q.delta, &self.quad)?;
                d.entries.axpy(dk, &c.entries);
            }
            Ok(d)
        })
    }

    /// `Ã(q)`.
    pub fn evaluate(&self, q: ParamPoint) -> Result<StiffnessMatrix> {
        self.check(&q)?;
        let (k, w) = self.schedule.lagrange_eval(q.s)?;
        let mut entries = self.combine(k, &w);
        if q.is_infinite() {
            return Ok(StiffnessMatrix {
                entries,
                param: q,
                kind: MatrixKind::InfiniteHorizon,
            });
        }
        entries.axpy(1.0, &self.correction(q)?.entries);
        Ok(StiffnessMatrix {
            entries,
            param: q,
            kind: MatrixKind::Full,
        })
    }

    /// `∂_s Ã(q)`.
    pub fn evaluate_ds(&self, q: ParamPoint) -> Result<StiffnessMatrix> {
        self.check(&q)?;
        let (k, w) = self.schedule.lagrange_deriv(q.s)?;
        let mut entries = self.combine(k, &w);
        if !q.is_infinite() {
            entries.axpy(1.0, &self.correction_ds(q)?.entries);
        }
        Ok(StiffnessMatrix {
            entries,
            param: q,
            kind: MatrixKind::SDerivative,
        })
    }

    /// `∂_δ Ã(q)`; undefined for `δ = ∞`.
    pub fn evaluate_ddelta(&self, q: ParamPoint) -> Result<Arc<StiffnessMatrix>> {
        self.check(&q)?;
        if q.is_infinite() {
            return Err(Error::InfiniteHorizon);
        }
        self.cached(q, CachedKind::DeltaDerivative, || {
            let mut d = assemble_delta_derivative(&self.mesh, q)?;
            d.entries = d.entries.scaled(self.scaling.factor(q.s));
            Ok(d)
        })
    }

    /// `κ(s) A(s, δ)` assembled without interpolation in `s`.
    pub fn exact(&self, q: ParamPoint) -> Result<StiffnessMatrix> {
        self.check(&q)?;
        let a = assemble_infinite(&self.mesh, q.s, &self.quad)?;
        let mut entries = a.entries.scaled(self.scaling.factor(q.s));
        if q.is_infinite() {
            return Ok(StiffnessMatrix {
                entries,
                param: q,
                kind: MatrixKind::InfiniteHorizon,
            });
        }
        entries.axpy(1.0, &self.correction(q)?.entries);
        Ok(StiffnessMatrix {
            entries,
            param: q,
            kind: MatrixKind::Full,
        })
    }
}

/// Smallest generalized eigenvalue of `(A, M)` by inverse iteration.
pub fn min_rayleigh_quotient(a: &SymToeplitz, m: &SymToeplitz) -> Result<f64> {
    let inv = ToeplitzInverse::new(a)?;
    let n = a.n();
    let mut x: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64)
        .collect();
    let mut lambda = f64::INFINITY;
    for _ in 0..200 {
        let y = inv.apply(&m.matvec(&x));
        let norm = m.bilinear(&y, &y).sqrt();
        x = y.iter().map(|v| v / norm).collect();
        let next = a.bilinear(&x, &x) / m.bilinear(&x, &x);
        let done = ((lambda - next) / next).abs() < 1e-10;
        lambda = next;
        if done {
            break;
        }
    }
    Ok(lambda)
}

/// Interpolation tolerance tied to the mesh: `η = ½ h^{1/2} α` with `α = λ/(1 + λ)`
/// the coercivity constant in the full `H^s` norm, `λ` the smallest Rayleigh
/// quotient of `κ A(s_min, ∞)` against the mass matrix.
pub fn auto_eta(
    mesh: &Mesh1D,
    s_min: f64,
    scaling: KernelScaling,
    quad: &QuadratureConfig,
) -> Result<f64> {
    let a = assemble_infinite(mesh, s_min, quad)?
        .entries
        .scaled(scaling.factor(s_min));
    let lambda = min_rayleigh_quotient(&a, &mass_matrix(mesh))?;
    Ok(0.5 * mesh.h.sqrt() * lambda / (1.0 + lambda))
}

/// `uᵀ A v` helper used by the gradient.
pub fn form(a: &StiffnessMatrix, u: &[f64], v: &[f64]) -> f64 {
    dot(u, &a.entries.matvec(v))
}
