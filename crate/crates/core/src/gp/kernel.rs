use serde::{Deserialize, Serialize};

/// Matérn smoothness. Both are once mean-square differentiable or better.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Matern32,
    #[default]
    Matern52,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Matern32 => "matern32",
            KernelFamily::Matern52 => "matern52",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "matern32" => Some(KernelFamily::Matern32),
            "matern52" => Some(KernelFamily::Matern52),
            _ => None,
        }
    }

    pub fn nu(self) -> f64 {
        match self {
            KernelFamily::Matern32 => 1.5,
            KernelFamily::Matern52 => 2.5,
        }
    }

    /// Correlation at scaled distance `r`; equals 1 at `r = 0`.
    #[inline]
    pub fn corr(self, r: f64) -> f64 {
        match self {
            KernelFamily::Matern32 => {
                let a = 3f64.sqrt() * r;
                (1.0 + a) * (-a).exp()
            }
            KernelFamily::Matern52 => {
                let a = 5f64.sqrt() * r;
                (1.0 + a + a * a / 3.0) * (-a).exp()
            }
        }
    }

    /// `g(r)` such that `∂k/∂log ℓ_i = g(r) · d_i² / ℓ_i²`.
    #[inline]
    pub fn dlog_factor(self, r: f64) -> f64 {
        match self {
            KernelFamily::Matern32 => 3.0 * (-(3f64.sqrt()) * r).exp(),
            KernelFamily::Matern52 => {
                let a = 5f64.sqrt() * r;
                5.0 / 3.0 * (1.0 + a) * (-a).exp()
            }
        }
    }
}

/// Coordinate difference. On a periodic axis this is the chord length
/// `(P/π) sin(π|Δ|/P)` of the circle of circumference `P`: it matches the
/// wrapped difference `min(|Δ|, P - |Δ|)` to second order for small `Δ`,
/// and unlike the wrapped (arc) distance it keeps Matérn kernels positive
/// definite, being a Euclidean distance in the plane embedding.
#[inline]
pub fn axis_diff(a: f64, b: f64, period: Option<f64>) -> f64 {
    let d = a - b;
    match period {
        Some(p) => {
            let d = d.abs().rem_euclid(p);
            p / std::f64::consts::PI * (std::f64::consts::PI * d / p).sin()
        }
        None => d,
    }
}

/// Number of embedding coordinates: two per periodic axis, one otherwise.
pub fn embedded_dim(periods: &[Option<f64>]) -> usize {
    periods.iter().map(|p| if p.is_some() { 2 } else { 1 }).sum()
}

/// Appends the lengthscale-scaled embedding of `x`, whose Euclidean
/// distances equal the scaled [`axis_diff`] distances: periodic axes map to
/// a circle of radius `P/2π`.
pub fn embed(x: &[f64], lengthscales: &[f64], periods: &[Option<f64>], out: &mut Vec<f64>) {
    for i in 0..x.len() {
        match periods[i] {
            Some(p) => {
                let r = p / (2.0 * std::f64::consts::PI);
                let (s, c) = (x[i] / r).sin_cos();
                out.push(r * c / lengthscales[i]);
                out.push(r * s / lengthscales[i]);
            }
            None => out.push(x[i] / lengthscales[i]),
        }
    }
}

/// Squared ARD distance `Σ (d_i / ℓ_i)²`.
#[inline]
pub fn scaled_sq_dist(a: &[f64], b: &[f64], lengthscales: &[f64], periods: &[Option<f64>]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = axis_diff(a[i], b[i], periods[i]) / lengthscales[i];
        s += d * d;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_at_zero_and_decreasing() {
        for f in [KernelFamily::Matern32, KernelFamily::Matern52] {
            assert_eq!(f.corr(0.0), 1.0);
            let mut prev = 1.0;
            for i in 1..100 {
                let k = f.corr(i as f64 * 0.1);
                assert!(k < prev && k > 0.0);
                prev = k;
            }
        }
    }

    #[test]
    fn dlog_factor_matches_finite_difference() {
        // one input dimension: r = |d| / ℓ, ∂k/∂log ℓ = g(r) r²
        for f in [KernelFamily::Matern32, KernelFamily::Matern52] {
            for &(d, ell) in &[(0.3, 0.7), (1.2, 0.4), (0.05, 2.0)] {
                let k = |logl: f64| f.corr(d / logl.exp());
                let h = 1e-6;
                let fd = (k(f64::ln(ell) + h) - k(f64::ln(ell) - h)) / (2.0 * h);
                let r: f64 = d / ell;
                let an = f.dlog_factor(r) * r * r;
                assert!((fd - an).abs() < 1e-8, "{f:?} {fd} {an}");
            }
        }
    }

    #[test]
    fn periodic_difference() {
        let tau = 2.0 * std::f64::consts::PI;
        let p = Some(tau);
        // across the seam: arc 2π - 6 ≈ 0.283, chord slightly shorter
        let arc = tau - 6.0;
        let d = axis_diff(3.0, -3.0, p);
        assert!(d < arc && arc - d < arc.powi(3) / 24.0 + 1e-12);
        assert_eq!(axis_diff(3.0, -3.0, None), 6.0);
        assert!(axis_diff(0.1, 0.1 + 2.0 * tau, p).abs() < 1e-12);
        // antipodal points are a diameter apart
        assert!((axis_diff(0.0, std::f64::consts::PI, p) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn embedding_reproduces_scaled_distance() {
        let periods = [Some(2.0 * std::f64::consts::PI), None];
        let ells = [0.7, 1.9];
        for (a, b) in [([3.0, 0.5], [-3.0, 1.5]), ([0.1, -2.0], [1.7, 4.0]), ([-1.0, 0.0], [2.0, 0.0])] {
            let (mut ea, mut eb) = (Vec::new(), Vec::new());
            embed(&a, &ells, &periods, &mut ea);
            embed(&b, &ells, &periods, &mut eb);
            let d2: f64 = ea.iter().zip(&eb).map(|(u, v)| (u - v) * (u - v)).sum();
            assert!((d2 - scaled_sq_dist(&a, &b, &ells, &periods)).abs() < 1e-12);
        }
    }

    #[test]
    fn periodic_gram_is_positive_definite_for_long_lengthscales() {
        use faer::{Mat, Side};
        let tau = 2.0 * std::f64::consts::PI;
        let xs: Vec<f64> = (0..200).map(|i| (i as f64 * 0.618).rem_euclid(tau)).collect();
        for ell in [0.5, 2.0, 10.0] {
            let k = Mat::from_fn(200, 200, |i, j| {
                let d = axis_diff(xs[i], xs[j], Some(tau)) / ell;
                KernelFamily::Matern52.corr(d.abs()) + if i == j { 1e-8 } else { 0.0 }
            });
            assert!(k.llt(Side::Lower).is_ok(), "ell {ell}");
        }
    }
}
