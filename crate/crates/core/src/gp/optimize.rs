use serde::{Deserialize, Serialize};

/// Multi-start gradient ascent on the log marginal likelihood.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSettings {
    /// Number of starting points, the first of which is deterministic.
    pub restarts: usize,
    pub iterations: usize,
    /// Stop when the projected gradient norm falls below this.
    pub tolerance: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            restarts: 8,
            iterations: 200,
            tolerance: 1e-6,
        }
    }
}

pub struct Ascent {
    pub point: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

fn project(p: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..p.len() {
        p[i] = p[i].clamp(lo[i], hi[i]);
    }
}

/// Maximizes `f` over the box `[lo, hi]` from `start`. `f` returns value and
/// gradient, or `None` where undefined (treated as -∞). Every accepted step
/// increases the value, so the result is never worse than the start.
pub fn ascend<F>(f: F, start: &[f64], lo: &[f64], hi: &[f64], settings: &OptimizerSettings) -> Option<Ascent>
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut p = start.to_vec();
    project(&mut p, lo, hi);
    let (mut val, mut grad) = f(&p)?;
    let mut step = {
        let gn = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gn > 0.0 {
            (0.1 / gn).min(1.0)
        } else {
            1e-2
        }
    };
    let mut iterations = 0;
    let mut trial = vec![0.0; p.len()];
    while iterations < settings.iterations {
        // projected gradient as the stationarity measure
        let mut pg = 0.0;
        for i in 0..p.len() {
            let moved = (p[i] + grad[i]).clamp(lo[i], hi[i]) - p[i];
            pg += moved * moved;
        }
        if pg.sqrt() < settings.tolerance {
            break;
        }
        iterations += 1;
        let accepted = loop {
            for i in 0..p.len() {
                trial[i] = p[i] + step * grad[i];
            }
            project(&mut trial, lo, hi);
            let gain: f64 = (0..p.len()).map(|i| grad[i] * (trial[i] - p[i])).sum();
            if gain <= 0.0 {
                break None;
            }
            match f(&trial) {
                Some((v, g)) if v >= val + 1e-4 * gain => break Some((v, g)),
                _ => {
                    step *= 0.5;
                    if step < 1e-14 {
                        break None;
                    }
                }
            }
        };
        let Some((new_val, new_grad)) = accepted else {
            break;
        };
        let mut ss = 0.0;
        let mut sy = 0.0;
        for i in 0..p.len() {
            let s = trial[i] - p[i];
            ss += s * s;
            sy += s * (new_grad[i] - grad[i]);
        }
        // BB1 for ascent: curvature along s is negative when concave
        step = if sy < 0.0 { ss / -sy } else { step * 4.0 };
        step = step.clamp(1e-10, 1e4);
        p.copy_from_slice(&trial);
        val = new_val;
        grad = new_grad;
    }
    Some(Ascent {
        point: p,
        value: val,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concave_quadratic() {
        let f = |p: &[f64]| {
            let v = -(p[0] - 1.0).powi(2) - 10.0 * (p[1] + 2.0).powi(2);
            Some((v, vec![-2.0 * (p[0] - 1.0), -20.0 * (p[1] + 2.0)]))
        };
        let s = OptimizerSettings::default();
        let r = ascend(f, &[5.0, 5.0], &[-10.0, -10.0], &[10.0, 10.0], &s).unwrap();
        assert!((r.point[0] - 1.0).abs() < 1e-6 && (r.point[1] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn respects_bounds() {
        let f = |p: &[f64]| Some((p[0], vec![1.0]));
        let r = ascend(f, &[0.0], &[-1.0], &[2.0], &OptimizerSettings::default()).unwrap();
        assert_eq!(r.point, vec![2.0]);
    }

    #[test]
    fn rosenbrock_improves() {
        let f = |p: &[f64]| {
            let (a, b) = (p[0], p[1]);
            let v = -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2));
            let ga = 2.0 * (1.0 - a) + 400.0 * a * (b - a * a);
            let gb = -200.0 * (b - a * a);
            Some((v, vec![ga, gb]))
        };
        let s = OptimizerSettings {
            iterations: 2000,
            ..Default::default()
        };
        let r = ascend(f, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0], &s).unwrap();
        assert!(r.value > -1e-6, "{}", r.value);
    }
}
