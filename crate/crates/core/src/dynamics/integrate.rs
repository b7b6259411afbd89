/// One classical fourth-order Runge-Kutta step of size `h` for `x' = f(x)`.
///
/// `scratch` must hold at least `5 * x.len()` values; the result is written
/// to `out`.
pub fn rk4_step<F>(f: &F, x: &[f64], h: f64, scratch: &mut [f64], out: &mut [f64])
where
    F: Fn(&[f64], &mut [f64]) + ?Sized,
{
    let n = x.len();
    let (k1, rest) = scratch.split_at_mut(n);
    let (k2, rest) = rest.split_at_mut(n);
    let (k3, rest) = rest.split_at_mut(n);
    let (k4, rest) = rest.split_at_mut(n);
    let tmp = &mut rest[..n];

    f(x, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    f(tmp, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    f(tmp, k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    f(tmp, k4);
    for i in 0..n {
        out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrates `steps` fixed RK4 steps of size `h` starting from `x`.
pub fn rk4<F>(f: &F, x: &[f64], h: f64, steps: usize) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]) + ?Sized,
{
    let n = x.len();
    let mut scratch = vec![0.0; 5 * n];
    let mut state = x.to_vec();
    let mut next = vec![0.0; n];
    for _ in 0..steps {
        rk4_step(f, &state, h, &mut scratch, &mut next);
        std::mem::swap(&mut state, &mut next);
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let f = |x: &[f64], dx: &mut [f64]| dx[0] = -x[0];
        let y = rk4(&f, &[1.0], 0.01, 100);
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn fourth_order_convergence() {
        // harmonic oscillator, exact solution (cos t, -sin t)
        let f = |x: &[f64], dx: &mut [f64]| {
            dx[0] = x[1];
            dx[1] = -x[0];
        };
        let err = |steps: usize| {
            let y = rk4(&f, &[1.0, 0.0], 2.0 / steps as f64, steps);
            ((y[0] - 2.0f64.cos()).powi(2) + (y[1] + 2.0f64.sin()).powi(2)).sqrt()
        };
        let ratio = err(20) / err(40);
        assert!((ratio - 16.0).abs() < 16.0 * 0.1, "ratio {ratio}");
    }
}
