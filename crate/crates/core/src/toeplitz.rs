//! Symmetric Toeplitz matrices.
//!
//! Every operator of a translation-invariant kernel on a uniform 1D mesh is
//! symmetric Toeplitz, so a matrix is stored as its first column. Products use
//! a circulant embedding (FFT) above a small size threshold; solves go through
//! the Levinson recursion and the Gohberg–Semencul representation of the
//! inverse.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

const DIRECT_MATVEC_MAX: usize = 96;

/// Symmetric Toeplitz matrix `T[i][j] = col[|i - j|]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymToeplitz {
    col: Vec<f64>,
}

impl SymToeplitz {
    pub fn new(col: Vec<f64>) -> Self {
        assert!(!col.is_empty(), "empty Toeplitz matrix");
        SymToeplitz { col }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n])
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.col.len()
    }

    #[inline]
    pub fn col(&self) -> &[f64] {
        &self.col
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.col[i.abs_diff(j)]
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        (0..n)
            .map(|i| (0..n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.col.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self::new(self.col.iter().map(|v| alpha * v).collect())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &SymToeplitz) {
        assert_eq!(self.n(), other.n());
        for (a, b) in self.col.iter_mut().zip(&other.col) {
            *a += alpha * b;
        }
    }

    pub fn sum(&self, other: &SymToeplitz) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n());
        if self.n() <= DIRECT_MATVEC_MAX {
            self.matvec_direct(x)
        } else {
            ToeplitzOperator::new(self).apply(x)
        }
    }

    fn matvec_direct(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .map(|i| (0..n).map(|j| self.col[i.abs_diff(j)] * x[j]).sum())
            .collect()
    }

    /// `vᵀ T w`.
    pub fn bilinear(&self, v: &[f64], w: &[f64]) -> f64 {
        dot(v, &self.matvec(w))
    }

    /// Writes the dense matrix row-major, one row per line.
    pub fn write_dense<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.n();
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| format!("{}", self.get(i, j))).collect();
            writeln!(out, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct FftPair {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    fn new(n: usize) -> Self {
        let len = (2 * n).next_power_of_two();
        let mut planner = FftPlanner::new();
        FftPair {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    fn spectrum(&self, v: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len];
        for (b, x) in buf.iter_mut().zip(v) {
            b.re = *x;
        }
        self.forward.process(&mut buf);
        buf
    }

    /// First `n` entries of the cyclic convolution of `x` (zero padded) with the
    /// sequence whose spectrum is `spectrum`.
    fn convolve(&self, spectrum: &[Complex64], x: &[f64], n: usize) -> Vec<f64> {
        let mut buf = self.spectrum(x);
        for (b, s) in buf.iter_mut().zip(spectrum) {
            *b *= s;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.len as f64;
        buf[..n].iter().map(|c| c.re * scale).collect()
    }
}

/// FFT-backed product with a fixed symmetric Toeplitz matrix.
pub struct ToeplitzOperator {
    n: usize,
    fft: FftPair,
    spectrum: Vec<Complex64>,
}

impl ToeplitzOperator {
    pub fn new(t: &SymToeplitz) -> Self {
        let n = t.n();
        let fft = FftPair::new(n);
        let mut c = vec![0.0; fft.len];
        c[..n].copy_from_slice(t.col());
        for k in 1..n {
            c[fft.len - k] = t.col()[k];
        }
        let spectrum = fft.spectrum(&c);
        ToeplitzOperator { n, fft, spectrum }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        self.fft.convolve(&self.spectrum, x, self.n)
    }
}

/// Solves `T x = b` by the Levinson recursion. Fails if a leading principal
/// minor is not positive definite.
pub fn levinson_solve(t: &SymToeplitz, b: &[f64]) -> Result<Vec<f64>> {
    let n = t.n();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let t0 = t.col()[0];
    if !(t0 > 0.0) {
        return Err(Error::NotPositiveDefinite(format!("diagonal {t0}")));
    }
    let r: Vec<f64> = t.col()[1..].iter().map(|v| v / t0).collect();
    let b: Vec<f64> = b.iter().map(|v| v / t0).collect();
    let mut x = vec![0.0; n];
    x[0] = b[0];
    if n == 1 {
        return Ok(x);
    }
    let mut y = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    y[0] = -r[0];
    let mut beta = 1.0;
    let mut alpha = -r[0];
    for k in 1..n {
        beta *= 1.0 - alpha * alpha;
        if !(beta > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "Levinson breakdown at order {k}"
            )));
        }
        let mut acc = b[k];
        for i in 0..k {
            acc -= r[i] * x[k - 1 - i];
        }
        let mu = acc / beta;
        for i in 0..k {
            x[i] += mu * y[k - 1 - i];
        }
        x[k] = mu;
        if k < n - 1 {
            let mut acc = -r[k];
            for i in 0..k {
                acc -= r[i] * y[k - 1 - i];
            }
            alpha = acc / beta;
            for i in 0..k {
                tmp[i] = y[i] + alpha * y[k - 1 - i];
            }
            y[..k].copy_from_slice(&tmp[..k]);
            y[k] = alpha;
        }
    }
    Ok(x)
}

/// Inverse of an SPD symmetric Toeplitz matrix in Gohberg–Semencul form,
/// `T⁻¹ = (L(a) L(a)ᵀ − L(ã) L(ã)ᵀ) / a₀`, where `a = T⁻¹ e₁` and
/// `ã = (0, a_{n−1}, …, a₁)`. Applying it costs four FFT convolutions.
pub struct ToeplitzInverse {
    n: usize,
    a0: f64,
    fft: FftPair,
    spec_a: Vec<Complex64>,
    spec_ashift: Vec<Complex64>,
}

impl ToeplitzInverse {
    pub fn new(t: &SymToeplitz) -> Result<Self> {
        let n = t.n();
        let mut e1 = vec![0.0; n];
        e1[0] = 1.0;
        let a = levinson_solve(t, &e1)?;
        let a0 = a[0];
        if !(a0 > 0.0) {
            return Err(Error::NotPositiveDefinite("inverse diagonal".into()));
        }
        let mut ashift = vec![0.0; n];
        for k in 1..n {
            ashift[k] = a[n - k];
        }
        let fft = FftPair::new(n);
        let spec_a = fft.spectrum(&a);
        let spec_ashift = fft.spectrum(&ashift);
        Ok(ToeplitzInverse {
            n,
            a0,
            fft,
            spec_a,
            spec_ashift,
        })
    }

    // L(v) x
    fn lower(&self, spectrum: &[Complex64], x: &[f64]) -> Vec<f64> {
        self.fft.convolve(spectrum, x, self.n)
    }

    // L(v)ᵀ x = J L(v) J x
    fn upper(&self, spectrum: &[Complex64], x: &[f64]) -> Vec<f64> {
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        let mut out = self.lower(spectrum, &rev);
        out.reverse();
        out
    }

    pub fn apply(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let p = self.lower(&self.spec_a, &self.upper(&self.spec_a, b));
        let q = self.lower(&self.spec_ashift, &self.upper(&self.spec_ashift, b));
        p.iter().zip(&q).map(|(x, y)| (x - y) / self.a0).collect()
    }
}

/// Dense Cholesky factor of a symmetric positive-definite matrix.
pub struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    pub fn factor(a: &[Vec<f64>]) -> Result<Self> {
        let n = a.len();
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[j][j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) {
                return Err(Error::NotPositiveDefinite(format!(
                    "Cholesky pivot {j}: {d:e}"
                )));
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut v = a[i][j];
                for k in 0..j {
                    v -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = v / d;
            }
        }
        Ok(DenseCholesky { n, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[i * n + k] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] -= self.l[k * n + i] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        y
    }
}
