//! Profiled log marginal likelihood of a zero-mean GP.
//!
//! With unit-variance correlation `K(ℓ)` and noise ratio `g`, the covariance
//! is `σ² C` where `C = K + g I`. Maximizing over `σ²` gives
//! `σ̂² = yᵀ C⁻¹ y / N` and
//!
//! ```text
//! L(ℓ, g) = -N/2 log σ̂² - 1/2 log|C| - N/2 (1 + log 2π)
//! ∂L/∂p   = 1/2 tr((α αᵀ / σ̂² - C⁻¹) ∂C/∂p),   α = C⁻¹ y
//! ```
//!
//! Parameters are `p = (log ℓ_1, .., log ℓ_M, log g)`.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, Side};

use super::kernel::{axis_diff, KernelFamily};

pub struct Evaluation {
    pub value: f64,
    pub sigma2: f64,
    pub gradient: Option<Vec<f64>>,
}

/// Training inputs with pairwise squared axis differences cached, so repeated
/// evaluations at different hyperparameters skip the geometry.
pub struct Problem<'a> {
    family: KernelFamily,
    n: usize,
    m: usize,
    y: &'a [f64],
    // for each pair j < k (row-major over j), M squared differences
    sq: Vec<f64>,
}

impl<'a> Problem<'a> {
    /// `xs` is row-major `n × m`.
    pub fn new(family: KernelFamily, xs: &[f64], m: usize, periods: &[Option<f64>], y: &'a [f64]) -> Self {
        let n = y.len();
        assert_eq!(xs.len(), n * m);
        let mut sq = Vec::with_capacity(n * n.saturating_sub(1) / 2 * m);
        for j in 0..n {
            for k in j + 1..n {
                for i in 0..m {
                    let d = axis_diff(xs[j * m + i], xs[k * m + i], periods[i]);
                    sq.push(d * d);
                }
            }
        }
        Problem { family, n, m, y, sq }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_params(&self) -> usize {
        self.m + 1
    }

    /// `C = K(ℓ) + g I`.
    pub fn covariance(&self, lengthscales: &[f64], g: f64) -> Mat<f64> {
        let (n, m) = (self.n, self.m);
        let inv2: Vec<f64> = lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
        let mut c = Mat::<f64>::zeros(n, n);
        let mut idx = 0;
        for j in 0..n {
            c[(j, j)] = 1.0 + g;
            for k in j + 1..n {
                let s = &self.sq[idx..idx + m];
                idx += m;
                let r2: f64 = s.iter().zip(&inv2).map(|(a, b)| a * b).sum();
                let v = self.family.corr(r2.sqrt());
                c[(j, k)] = v;
                c[(k, j)] = v;
            }
        }
        c
    }

    /// Returns `None` when `C` is not numerically positive definite.
    pub fn evaluate(&self, p: &[f64], with_gradient: bool) -> Option<Evaluation> {
        let (n, m) = (self.n, self.m);
        let ells: Vec<f64> = p[..m].iter().map(|v| v.exp()).collect();
        let g = p[m].exp();
        let c = self.covariance(&ells, g);
        let llt = c.llt(Side::Lower).ok()?;
        let mut alpha = Mat::<f64>::from_fn(n, 1, |i, _| self.y[i]);
        llt.solve_in_place(alpha.as_mut());
        let q: f64 = (0..n).map(|i| self.y[i] * alpha[(i, 0)]).sum();
        if !(q > 0.0) || !q.is_finite() {
            return None;
        }
        let sigma2 = q / n as f64;
        let l = llt.L();
        let logdet_half: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
        let nf = n as f64;
        let value = -0.5 * nf * sigma2.ln() - logdet_half - 0.5 * nf * (1.0 + (2.0 * std::f64::consts::PI).ln());
        if !value.is_finite() {
            return None;
        }
        let gradient = with_gradient.then(|| {
            let cinv = llt.inverse();
            let mut grad = vec![0.0; m + 1];
            let inv2: Vec<f64> = ells.iter().map(|l| 1.0 / (l * l)).collect();
            let mut scaled = vec![0.0; m];
            let mut idx = 0;
            for j in 0..n {
                let aj = alpha[(j, 0)] / sigma2;
                for k in j + 1..n {
                    let s = &self.sq[idx..idx + m];
                    idx += m;
                    let mut r2 = 0.0;
                    for i in 0..m {
                        scaled[i] = s[i] * inv2[i];
                        r2 += scaled[i];
                    }
                    // symmetric pair counted twice, halved by the 1/2 prefactor
                    let w = (aj * alpha[(k, 0)] - cinv[(j, k)]) * self.family.dlog_factor(r2.sqrt());
                    for i in 0..m {
                        grad[i] += w * scaled[i];
                    }
                }
            }
            let mut tr = 0.0;
            let mut aa = 0.0;
            for j in 0..n {
                tr += cinv[(j, j)];
                aa += alpha[(j, 0)] * alpha[(j, 0)];
            }
            grad[m] = 0.5 * g * (aa / sigma2 - tr);
            grad
        });
        Some(Evaluation { value, sigma2, gradient })
    }
}
