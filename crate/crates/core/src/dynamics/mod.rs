//! Time-τ maps of closed-loop systems and the trajectory data drawn from
//! them.

pub mod integrate;
pub mod oracle;
pub mod systems;

mod dataset;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_dim, Error, Result};
use crate::grid::StateBox;

pub use dataset::TrajectoryDataset;
pub use systems::System;

/// A black-box time-τ map.
pub trait Dynamics: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Duration of one [`Dynamics::flow`] call: seconds for continuous
    /// systems, one step for discrete maps.
    fn tau(&self) -> f64;

    /// The time-τ map.
    fn flow(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Advances by one integrator sub-step. Rollouts that watch for goal
    /// entry use this; the default is the whole flow.
    fn substep(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.flow(x)
    }

    fn substep_duration(&self) -> f64 {
        self.tau()
    }
}

/// A built-in system integrated with fixed-step RK4 (or iterated once, for
/// discrete maps).
#[derive(Clone, Debug)]
pub struct BuiltinFlow {
    system: System,
    tau: f64,
    steps: usize,
    h: f64,
}

impl BuiltinFlow {
    /// `step` is the requested integrator step; it is shrunk so that an
    /// integer number of steps spans `tau`.
    pub fn new(system: System, tau: f64, step: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
        }
        if !(step > 0.0) || step > tau {
            return Err(Error::InvalidArgument(format!(
                "integrator step must be in (0, tau], got {step}"
            )));
        }
        let steps = if system.is_discrete() {
            1
        } else {
            (tau / step - 1e-9).ceil().max(1.0) as usize
        };
        Ok(BuiltinFlow {
            h: tau / steps as f64,
            system,
            tau,
            steps,
        })
    }

    /// Default integrator step is `tau / 100`.
    pub fn with_default_step(system: System, tau: f64) -> Result<Self> {
        BuiltinFlow::new(system, tau, tau / 100.0)
    }

    pub fn system(&self) -> &System {
        &self.system
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    /// Same system and integrator step, different horizon.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        BuiltinFlow::new(self.system.clone(), tau, self.h.min(tau))
    }

    fn finite(&self, y: Vec<f64>) -> Result<Vec<f64>> {
        if y.iter().all(|v| v.is_finite()) {
            Ok(y)
        } else {
            Err(Error::NonFinite {
                system: self.system.name().to_string(),
                state: y,
            })
        }
    }
}

impl Dynamics for BuiltinFlow {
    fn name(&self) -> &str {
        self.system.name()
    }

    fn dim(&self) -> usize {
        self.system.dim()
    }

    fn tau(&self) -> f64 {
        self.tau
    }

    fn flow(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        if self.system.is_discrete() {
            return self.finite(self.system.apply_map(x));
        }
        let f = |s: &[f64], d: &mut [f64]| self.system.rhs(s, d);
        self.finite(integrate::rk4(&f, x, self.h, self.steps))
    }

    fn substep(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        if self.system.is_discrete() {
            return self.flow(x);
        }
        let f = |s: &[f64], d: &mut [f64]| self.system.rhs(s, d);
        self.finite(integrate::rk4(&f, x, self.h, 1))
    }

    fn substep_duration(&self) -> f64 {
        self.h
    }
}

/// Where a time-τ map comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum FlowKind {
    Builtin(System),
    /// Shell command speaking the line protocol of [`oracle`].
    External { command: String, dim: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowMapSpec {
    pub kind: FlowKind,
    pub tau: f64,
    /// Integrator step for built-in continuous systems.
    pub step: f64,
}

impl FlowMapSpec {
    pub fn builtin(system: System) -> Self {
        let tau = system.defaults().tau;
        FlowMapSpec {
            kind: FlowKind::Builtin(system),
            tau,
            step: tau / 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.step > 0.0) || self.step > self.tau {
            return Err(Error::Config(format!(
                "integrator step must satisfy 0 < step <= tau, got {}",
                self.step
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            FlowKind::Builtin(s) => s.dim(),
            FlowKind::External { dim, .. } => *dim,
        }
    }

    pub fn instantiate(&self) -> Result<Arc<dyn Dynamics>> {
        self.validate()?;
        Ok(match &self.kind {
            FlowKind::Builtin(system) => Arc::new(BuiltinFlow::new(system.clone(), self.tau, self.step)?),
            FlowKind::External { command, dim } => Arc::new(oracle::OracleClient::spawn(command, *dim, self.tau)?),
        })
    }
}

/// Counts every call into the true dynamics. Surrogate evaluations never
/// pass through here.
pub struct Propagator {
    dynamics: Arc<dyn Dynamics>,
    count: AtomicU64,
}

impl Propagator {
    pub fn new(dynamics: Arc<dyn Dynamics>) -> Self {
        Propagator {
            dynamics,
            count: AtomicU64::new(0),
        }
    }

    pub fn flow(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.dynamics.flow(x)
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    pub fn dynamics(&self) -> &Arc<dyn Dynamics> {
        &self.dynamics
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }
}

/// Draws `count` initial states uniformly over `region` and pairs each with
/// its image under the time-τ map. `noise_std` adds Gaussian noise to the
/// recorded images only.
pub fn sample_short_trajectories(
    propagator: &Propagator,
    region: &StateBox,
    count: usize,
    seed: u64,
    noise_std: f64,
) -> Result<TrajectoryDataset> {
    if count == 0 {
        return Err(Error::InvalidArgument("trajectory count must be at least 1".into()));
    }
    check_dim(propagator.dim(), region.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<Vec<f64>> = (0..count).map(|_| uniform_in(&mut rng, region)).collect();
    let mut data = TrajectoryDataset::new(propagator.dim(), propagator.dynamics().tau(), propagator.dynamics().name());
    let before = propagator.count();
    extend_with_images(propagator, &mut data, starts, &mut rng, noise_std)?;
    data.propagation_count = propagator.count() - before;
    Ok(data)
}

pub(crate) fn uniform_in(rng: &mut impl Rng, region: &StateBox) -> Vec<f64> {
    (0..region.dim())
        .map(|i| {
            let (lo, hi) = (region.lower()[i], region.upper()[i]);
            if hi > lo {
                rng.gen_range(lo..hi)
            } else {
                lo
            }
        })
        .collect()
}

/// Propagates `starts` through the true dynamics and appends the pairs.
pub(crate) fn extend_with_images(
    propagator: &Propagator,
    data: &mut TrajectoryDataset,
    starts: Vec<Vec<f64>>,
    rng: &mut impl Rng,
    noise_std: f64,
) -> Result<()> {
    let images = map_all(propagator, &starts)?;
    let noise = if noise_std > 0.0 {
        Some(Normal::new(0.0, noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else {
        None
    };
    for (x, mut y) in starts.into_iter().zip(images) {
        if let Some(n) = &noise {
            y.iter_mut().for_each(|v| *v += n.sample(rng));
        }
        data.push(x, y)?;
    }
    Ok(())
}

#[cfg(feature = "parallel")]
fn map_all(propagator: &Propagator, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    xs.par_iter().map(|x| propagator.flow(x)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_all(propagator: &Propagator, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    xs.iter().map(|x| propagator.flow(x)).collect()
}

/// Rolls out one trajectory of `total_time` from `x0`, sampled every τ, and
/// splits it into `floor(total_time / τ)` consecutive pairs. A non-finite
/// state ends the dataset at the last finite sample.
pub fn decompose_long_trajectory(propagator: &Propagator, x0: &[f64], total_time: f64) -> Result<TrajectoryDataset> {
    check_dim(propagator.dim(), x0.len())?;
    let tau = propagator.dynamics().tau();
    if !(total_time >= tau * (1.0 - 1e-9)) {
        return Err(Error::InvalidArgument(format!(
            "total_time {total_time} shorter than tau {tau}"
        )));
    }
    let segments = (total_time / tau + 1e-9).floor() as usize;
    let mut data = TrajectoryDataset::new(propagator.dim(), tau, propagator.dynamics().name());
    let before = propagator.count();
    let mut x = x0.to_vec();
    for _ in 0..segments {
        match propagator.flow(&x) {
            Ok(y) => {
                data.push(x, y.clone())?;
                x = y;
            }
            Err(Error::NonFinite { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    data.propagation_count = propagator.count() - before;
    Ok(data)
}
