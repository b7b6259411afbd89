//! Built-in benchmark systems with their default domains and goal regions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CubicalGrid, StateBox};

/// Torque-limited inverted pendulum `m l^2 θ'' = m g l sin θ - β θ' + u`
/// under the saturated feedback `u = -k · (sin θ, θ')`. θ = 0 is upright
/// and θ is periodic on `[-π, π)`. Near upright this is the LQR law
/// `-k · (θ, θ')`; using `sin θ` keeps the torque continuous at `θ = ±π`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumParams {
    /// kg
    pub mass: f64,
    /// m
    pub length: f64,
    /// m/s^2
    pub gravity: f64,
    /// N m s / rad, viscous
    pub friction: f64,
    /// N m
    pub max_torque: f64,
    /// N m / rad and N m s / rad
    pub gain: [f64; 2],
}

impl Default for PendulumParams {
    fn default() -> Self {
        // gain: continuous-time LQR on the upright linearization with
        // Q = I, R = 1 for these physical constants
        PendulumParams {
            mass: 0.15,
            length: 0.5,
            gravity: 9.81,
            friction: 0.1,
            max_torque: 0.6372,
            gain: [1.977_252_34, 0.976_240_64],
        }
    }
}

impl PendulumParams {
    /// Closed-loop Jacobian at the upright equilibrium, ignoring saturation.
    pub fn linearized_closed_loop(&self) -> [[f64; 2]; 2] {
        let inertia = self.mass * self.length * self.length;
        [
            [0.0, 1.0],
            [
                (self.mass * self.gravity * self.length - self.gain[0]) / inertia,
                -(self.friction + self.gain[1]) / inertia,
            ],
        ]
    }

    fn rhs(&self, x: &[f64], dx: &mut [f64]) {
        let inertia = self.mass * self.length * self.length;
        let u = (-(self.gain[0] * x[0].sin() + self.gain[1] * x[1])).clamp(-self.max_torque, self.max_torque);
        dx[0] = x[1];
        dx[1] = (self.mass * self.gravity * self.length * x[0].sin() - self.friction * x[1] + u) / inertia;
    }
}

/// Kinematic car (x, y, θ) steered to a goal pose by the move-to-pose law
/// of Corke, with forward-only speed and bounded steering angle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AckermannParams {
    /// m
    pub wheelbase: f64,
    pub k_rho: f64,
    pub k_alpha: f64,
    pub k_beta: f64,
    /// m/s
    pub max_speed: f64,
    /// rad
    pub max_steer: f64,
    /// rad
    pub goal_heading: f64,
}

impl Default for AckermannParams {
    fn default() -> Self {
        AckermannParams {
            wheelbase: 1.0,
            k_rho: 3.0,
            k_alpha: 8.0,
            k_beta: -3.0,
            max_speed: 30.0,
            max_steer: PI / 3.0,
            goal_heading: PI / 2.0,
        }
    }
}

impl AckermannParams {
    fn rhs(&self, x: &[f64], dx: &mut [f64]) {
        let (px, py, heading) = (x[0], x[1], x[2]);
        let rho = px.hypot(py);
        if rho < 1e-9 {
            dx.iter_mut().for_each(|d| *d = 0.0);
            return;
        }
        let alpha = wrap_angle((-py).atan2(-px) - heading);
        let beta = wrap_angle(self.goal_heading - heading - alpha);
        let speed = (self.k_rho * rho).clamp(0.0, self.max_speed);
        let turn_rate = self.k_alpha * alpha + self.k_beta * beta;
        let steer = (turn_rate * self.wheelbase / speed).atan().clamp(-self.max_steer, self.max_steer);
        dx[0] = speed * heading.cos();
        dx[1] = speed * heading.sin();
        dx[2] = speed / self.wheelbase * steer.tan();
    }
}

/// Vertical lunar descent (h, h', m) with `h'' = -k m'/m - g` and a
/// time-optimal free-fall then full-thrust switching law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LanderParams {
    /// m/s, exhaust velocity
    pub exhaust_velocity: f64,
    /// m/s^2
    pub gravity: f64,
    /// kg/s
    pub max_flow: f64,
    /// kg
    pub dry_mass: f64,
}

impl Default for LanderParams {
    fn default() -> Self {
        LanderParams {
            exhaust_velocity: 3050.0,
            gravity: 1.62,
            max_flow: 9.765625,
            dry_mass: 2134.0,
        }
    }
}

impl LanderParams {
    fn thrusting(&self, h: f64, v: f64, m: f64) -> bool {
        if m <= self.dry_mass || v >= 0.0 {
            return false;
        }
        let decel = self.exhaust_velocity * self.max_flow / m - self.gravity;
        decel <= 0.0 || h <= v * v / (2.0 * decel)
    }

    fn rhs(&self, x: &[f64], dx: &mut [f64]) {
        let (h, v, m) = (x[0], x[1], x[2]);
        if h <= 0.0 && v <= 0.0 {
            // touched down
            dx.iter_mut().for_each(|d| *d = 0.0);
            return;
        }
        let flow = if self.thrusting(h, v, m) { -self.max_flow } else { 0.0 };
        dx[0] = v;
        dx[1] = -self.exhaust_velocity * flow / m - self.gravity;
        dx[2] = flow;
    }
}

/// Damped double well `x'' = -c x' + x - x^3` with point attractors at
/// `(±1, 0)` and a saddle at the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DuffingParams {
    pub damping: f64,
}

impl Default for DuffingParams {
    fn default() -> Self {
        DuffingParams { damping: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum System {
    /// Discrete map `y = arctan(x)`.
    Arctan,
    Pendulum(PendulumParams),
    Ackermann(AckermannParams),
    Lander(LanderParams),
    Duffing(DuffingParams),
    /// Discrete identity map of the given dimension.
    Identity(usize),
}

/// Domain, periodicity, goal and time step a system ships with.
#[derive(Clone, Debug)]
pub struct SystemDefaults {
    pub domain: StateBox,
    pub periodic: Vec<bool>,
    pub goal: StateBox,
    pub tau: f64,
    /// Cells per dimension of the default analysis grid.
    pub cells: Vec<usize>,
}

impl SystemDefaults {
    pub fn grid(&self) -> CubicalGrid {
        CubicalGrid::new(self.domain.clone(), self.cells.clone(), self.periodic.clone()).expect("static grid")
    }
}

pub const BUILTIN_NAMES: &[&str] = &[
    "arctan-1d",
    "pendulum-lqr",
    "ackermann-corke",
    "lander-toc",
    "duffing-2well",
    "identity",
];

impl System {
    /// Looks a system up by name; `params` is an optional TOML table of
    /// parameter overrides.
    pub fn from_name(name: &str, params: Option<toml::Table>) -> Result<Self> {
        fn parse<T: serde::de::DeserializeOwned + Default>(params: Option<toml::Table>) -> Result<T> {
            match params {
                None => Ok(T::default()),
                Some(t) => t
                    .try_into()
                    .map_err(|e: toml::de::Error| Error::Config(format!("system parameters: {}", e.message()))),
            }
        }
        Ok(match name {
            "arctan-1d" => {
                no_params(name, &params)?;
                System::Arctan
            }
            "pendulum-lqr" => System::Pendulum(parse(params)?),
            "ackermann-corke" => System::Ackermann(parse(params)?),
            "lander-toc" => System::Lander(parse(params)?),
            "duffing-2well" => System::Duffing(parse(params)?),
            "identity" => {
                #[derive(Deserialize, Default)]
                #[serde(deny_unknown_fields)]
                struct P {
                    dim: Option<usize>,
                }
                let p: P = parse(params)?;
                System::Identity(p.dim.unwrap_or(1).max(1))
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown system '{other}' (built-ins: {})",
                    BUILTIN_NAMES.join(", ")
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            System::Arctan => "arctan-1d",
            System::Pendulum(_) => "pendulum-lqr",
            System::Ackermann(_) => "ackermann-corke",
            System::Lander(_) => "lander-toc",
            System::Duffing(_) => "duffing-2well",
            System::Identity(_) => "identity",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            System::Arctan => 1,
            System::Pendulum(_) | System::Duffing(_) => 2,
            System::Ackermann(_) | System::Lander(_) => 3,
            System::Identity(d) => *d,
        }
    }

    /// Discrete systems have no vector field; their flow is one map step.
    pub fn is_discrete(&self) -> bool {
        matches!(self, System::Arctan | System::Identity(_))
    }

    pub fn apply_map(&self, x: &[f64]) -> Vec<f64> {
        match self {
            System::Arctan => vec![x[0].atan()],
            System::Identity(_) => x.to_vec(),
            _ => unreachable!("apply_map on a continuous system"),
        }
    }

    pub fn rhs(&self, x: &[f64], dx: &mut [f64]) {
        match self {
            System::Pendulum(p) => p.rhs(x, dx),
            System::Ackermann(p) => p.rhs(x, dx),
            System::Lander(p) => p.rhs(x, dx),
            System::Duffing(p) => {
                dx[0] = x[1];
                dx[1] = -p.damping * x[1] + x[0] - x[0] * x[0] * x[0];
            }
            System::Arctan | System::Identity(_) => unreachable!("rhs on a discrete system"),
        }
    }

    pub fn defaults(&self) -> SystemDefaults {
        let b = |lo: &[f64], hi: &[f64]| StateBox::new(lo.to_vec(), hi.to_vec()).expect("static box");
        match self {
            System::Arctan => SystemDefaults {
                domain: b(&[-3.0], &[3.0]),
                periodic: vec![false],
                goal: b(&[-0.1], &[0.1]),
                tau: 1.0,
                cells: vec![5],
            },
            System::Pendulum(_) => SystemDefaults {
                domain: b(&[-PI, -2.0 * PI], &[PI, 2.0 * PI]),
                periodic: vec![true, false],
                goal: b(&[-0.1, -0.1], &[0.1, 0.1]),
                tau: 1.0,
                cells: vec![64, 64],
            },
            System::Ackermann(p) => SystemDefaults {
                domain: b(&[-10.0, -10.0, -PI], &[10.0, 10.0, PI]),
                periodic: vec![false, false, true],
                goal: b(
                    &[-0.5, -0.5, p.goal_heading - 0.2],
                    &[0.5, 0.5, p.goal_heading + 0.2],
                ),
                tau: 1.0,
                cells: vec![32, 32, 32],
            },
            System::Lander(_) => SystemDefaults {
                domain: b(&[-1.0, -10.0, 2134.0], &[10.0, 10.0, 10334.0]),
                periodic: vec![false; 3],
                goal: b(&[-1.0, -0.5, 2134.0], &[0.05, 0.5, 10334.0]),
                tau: 1.0,
                cells: vec![32, 32, 16],
            },
            System::Duffing(_) => SystemDefaults {
                domain: b(&[-2.0, -2.0], &[2.0, 2.0]),
                periodic: vec![false, false],
                goal: b(&[0.9, -0.1], &[1.1, 0.1]),
                tau: 2.0,
                cells: vec![128, 128],
            },
            System::Identity(d) => SystemDefaults {
                domain: b(&vec![0.0; *d], &vec![1.0; *d]),
                periodic: vec![false; *d],
                goal: b(&vec![0.4; *d], &vec![0.6; *d]),
                tau: 1.0,
                cells: vec![4; *d],
            },
        }
    }
}

fn no_params(name: &str, params: &Option<toml::Table>) -> Result<()> {
    match params {
        Some(t) if !t.is_empty() => Err(Error::Config(format!("system '{name}' takes no parameters"))),
        _ => Ok(()),
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pendulum_closed_loop_is_hurwitz() {
        let a = PendulumParams::default().linearized_closed_loop();
        let tr = a[0][0] + a[1][1];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let disc = tr * tr - 4.0 * det;
        // 2x2: both roots have negative real part iff trace < 0 and det > 0
        assert!(tr < 0.0 && det > 0.0);
        assert!(disc > 0.0);
        let r1 = 0.5 * (tr + disc.sqrt());
        let r2 = 0.5 * (tr - disc.sqrt());
        assert!((r1 + 1.204).abs() < 1e-2, "{r1}");
        assert!((r2 + 27.496).abs() < 1e-2, "{r2}");
    }

    #[test]
    fn pendulum_upright_is_equilibrium() {
        let s = System::Pendulum(PendulumParams::default());
        let mut dx = [1.0; 2];
        s.rhs(&[0.0, 0.0], &mut dx);
        assert_eq!(dx, [0.0, 0.0]);
    }

    #[test]
    fn pendulum_field_is_periodic_in_angle() {
        let s = System::Pendulum(PendulumParams::default());
        let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
        s.rhs(&[0.7, -1.3], &mut a);
        s.rhs(&[0.7 + 2.0 * PI, -1.3], &mut b);
        assert!((a[1] - b[1]).abs() < 1e-9);
    }

    #[test]
    fn duffing_wells_are_equilibria() {
        let s = System::Duffing(DuffingParams::default());
        for x in [-1.0, 0.0, 1.0] {
            let mut dx = [1.0; 2];
            s.rhs(&[x, 0.0], &mut dx);
            assert_eq!(dx, [0.0, 0.0]);
        }
    }

    #[test]
    fn lander_free_falls_then_burns() {
        let p = LanderParams::default();
        assert!(!p.thrusting(9.0, -0.5, 8000.0));
        assert!(p.thrusting(0.5, -5.0, 8000.0));
        assert!(!p.thrusting(0.5, -5.0, p.dry_mass));
        let s = System::Lander(p);
        let mut dx = [1.0; 3];
        s.rhs(&[0.0, 0.0, 5000.0], &mut dx);
        assert_eq!(dx, [0.0; 3]);
    }

    #[test]
    fn ackermann_at_goal_is_still() {
        let s = System::Ackermann(AckermannParams::default());
        let mut dx = [1.0; 3];
        s.rhs(&[0.0, 0.0, PI / 2.0], &mut dx);
        assert_eq!(dx, [0.0; 3]);
    }

    #[test]
    fn parses_names_and_params() {
        let mut t = toml::Table::new();
        t.insert("damping".into(), toml::Value::Float(0.5));
        assert_eq!(
            System::from_name("duffing-2well", Some(t)).unwrap(),
            System::Duffing(DuffingParams { damping: 0.5 })
        );
        let mut bad = toml::Table::new();
        bad.insert("dampening".into(), toml::Value::Float(0.5));
        assert!(System::from_name("duffing-2well", Some(bad)).is_err());
        assert!(System::from_name("nope", None).is_err());
        for name in BUILTIN_NAMES {
            let s = System::from_name(name, None).unwrap();
            assert_eq!(s.name(), *name);
            let d = s.defaults();
            assert_eq!(d.domain.dim(), s.dim());
            assert_eq!(d.goal.dim(), s.dim());
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert_eq!(wrap_angle(0.0), 0.0);
        assert!((wrap_angle(-PI) + PI).abs() < 1e-15);
    }
}
