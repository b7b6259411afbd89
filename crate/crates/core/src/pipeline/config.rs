use serde::{Deserialize, Serialize};

use crate::dynamics::{FlowKind, FlowMapSpec, System};
use crate::error::{Error, Result};
use crate::gp::GpSettings;
use crate::grid::{CubicalGrid, StateBox};

/// Everything a run needs. Sections left out fall back to the system's
/// shipped defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub system: SystemSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub gp: GpSettings,
    #[serde(default)]
    pub delta: DeltaSection,
    #[serde(default)]
    pub refine: RefineSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<BoxSection>,
    #[serde(default)]
    pub truth: TruthSection,
    #[serde(default)]
    pub true_map: TrueMapSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    /// Built-in system name, or a label for an external oracle.
    pub name: String,
    /// Seconds per map step (one step for discrete maps).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// RK4 step in seconds; defaults to `tau / 100`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    /// Shell command of an external dynamics oracle. Unless `name` is a
    /// built-in supplying defaults, also set `dim`, `tau`, `[grid]` and
    /// `[goal]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Parameter overrides for the built-in system (state units).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<toml::Table>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// State-space bounds, in state units.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Exponents `k_i`: `2^k_i` cells along dimension `i`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subdivisions: Option<Vec<u32>>,
    /// Explicit cell counts; excludes `subdivisions`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periodic: Option<Vec<bool>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryMode {
    /// Independent one-step pairs from uniform initial states.
    #[default]
    Short,
    /// Long rollouts of `long_duration` seconds cut into τ segments.
    Long,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Initial trajectory count (long mode: number of rollouts).
    pub initial: usize,
    pub trajectory: TrajectoryMode,
    /// Seconds per long rollout.
    pub long_duration: f64,
    /// Standard deviation of Gaussian noise added to recorded images, in
    /// state units.
    pub noise_std: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            initial: 300,
            trajectory: TrajectoryMode::Short,
            long_duration: 2.5,
            noise_std: 0.0,
        }
    }
}

/// Confidence schedule: `δ` moves linearly from `initial` to `final` over
/// the refinement rounds. `final` defaults to `initial`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaSection {
    #[serde(default = "default_delta")]
    pub initial: f64,
    #[serde(default, rename = "final", skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
}

fn default_delta() -> f64 {
    0.05
}

impl Default for DeltaSection {
    fn default() -> Self {
        DeltaSection {
            initial: default_delta(),
            target: None,
        }
    }
}

impl DeltaSection {
    /// `δ` after `round` of `rounds` refinement rounds.
    pub fn at(&self, round: usize, rounds: usize) -> f64 {
        let end = self.target.unwrap_or(self.initial);
        if rounds == 0 {
            return self.initial;
        }
        let t = round.min(rounds) as f64 / rounds as f64;
        self.initial + t * (end - self.initial)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScope {
    /// Uniform over the whole domain.
    #[default]
    Global,
    /// Half inside the goal's region of attraction, half in the one-cell
    /// shell around it.
    TargetRoa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineSection {
    pub rounds: usize,
    pub per_round: usize,
    pub scope: SamplingScope,
    /// Re-optimize hyperparameters every this many rounds (warm start);
    /// other rounds condition on the new data with hyperparameters fixed.
    /// Zero, the default, never refits, which keeps the mean predictive
    /// standard deviation from growing between rounds.
    pub refit_every: usize,
    /// Optimizer iterations per warm refit.
    pub refit_iterations: usize,
}

impl Default for RefineSection {
    fn default() -> Self {
        RefineSection {
            rounds: 0,
            per_round: 10,
            scope: SamplingScope::Global,
            refit_every: 0,
            refit_iterations: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSection {
    pub fn to_box(&self) -> Result<StateBox> {
        StateBox::new(self.lower.clone(), self.upper.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthSection {
    /// Fine cells per analysis cell along each dimension.
    pub resolution: usize,
    /// Rollout horizon in seconds (map steps for discrete systems).
    pub horizon: f64,
}

impl Default for TruthSection {
    fn default() -> Self {
        TruthSection {
            resolution: 2,
            horizon: 30.0,
        }
    }
}

/// Padding of the true-dynamics map, used by the `true` analysis mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TrueMapSection {
    /// Absolute padding per dimension, in state units; empty means zero.
    pub padding: Vec<f64>,
    /// Padding as a fraction of each image box's width.
    pub relative: f64,
}

impl PipelineConfig {
    /// Defaults for a built-in system.
    pub fn for_system(name: &str) -> Self {
        PipelineConfig {
            seed: 0,
            system: SystemSection {
                name: name.to_string(),
                tau: None,
                step: None,
                oracle: None,
                dim: None,
                params: None,
            },
            grid: None,
            data: DataSection::default(),
            gp: GpSettings::default(),
            delta: DeltaSection::default(),
            refine: RefineSection::default(),
            goal: None,
            truth: TruthSection::default(),
            // the pendulum's flow folds inside some cells, so its corner
            // hulls need one image width of padding
            true_map: TrueMapSection {
                relative: if name == "pendulum-lqr" { 1.0 } else { 0.0 },
                ..TrueMapSection::default()
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex digest of the canonical serialization, used to name run
    /// directories.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The built-in system named in the config. With an oracle the name may
    /// be a bare label; if it names a built-in, that system still supplies
    /// defaults for the dimension, τ, grid and goal.
    fn builtin(&self) -> Result<Option<System>> {
        match self.system.oracle {
            Some(_) => Ok(System::from_name(&self.system.name, self.system.params.clone()).ok()),
            None => System::from_name(&self.system.name, self.system.params.clone()).map(Some),
        }
    }

    pub fn flow_spec(&self) -> Result<FlowMapSpec> {
        let builtin = self.builtin()?;
        let spec = match (&self.system.oracle, builtin) {
            (None, Some(system)) => {
                let mut spec = FlowMapSpec::builtin(system);
                if let Some(tau) = self.system.tau {
                    spec.tau = tau;
                    spec.step = tau / 100.0;
                }
                spec
            }
            (Some(command), builtin) => {
                let dim = self
                    .system
                    .dim
                    .or(builtin.as_ref().map(System::dim))
                    .ok_or_else(|| Error::Config("external oracle needs system.dim".into()))?;
                let tau = self
                    .system
                    .tau
                    .or(builtin.as_ref().map(|s| s.defaults().tau))
                    .ok_or_else(|| Error::Config("external oracle needs system.tau".into()))?;
                FlowMapSpec {
                    kind: FlowKind::External {
                        command: command.clone(),
                        dim,
                    },
                    tau,
                    step: tau,
                }
            }
            (None, None) => unreachable!("without an oracle the name must resolve"),
        };
        let spec = match self.system.step {
            Some(step) => FlowMapSpec { step, ..spec },
            None => spec,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn grid(&self) -> Result<CubicalGrid> {
        match (&self.grid, self.builtin()?) {
            (Some(g), builtin) => {
                let bounds = StateBox::new(g.lower.clone(), g.upper.clone())?;
                let m = bounds.dim();
                let periodic = match (&g.periodic, &builtin) {
                    (Some(p), _) => p.clone(),
                    (None, Some(s)) => s.defaults().periodic,
                    (None, None) => vec![false; m],
                };
                match (&g.subdivisions, &g.cells) {
                    (Some(k), None) => CubicalGrid::dyadic(bounds, k, periodic),
                    (None, Some(n)) => CubicalGrid::new(bounds, n.clone(), periodic),
                    (None, None) => match builtin {
                        Some(s) => CubicalGrid::new(bounds, s.defaults().cells, periodic),
                        None => Err(Error::Config("grid needs subdivisions or cells".into())),
                    },
                    (Some(_), Some(_)) => Err(Error::Config("grid takes subdivisions or cells, not both".into())),
                }
            }
            (None, Some(s)) => Ok(s.defaults().grid()),
            (None, None) => Err(Error::Config("external oracle needs a [grid] section".into())),
        }
    }

    pub fn goal(&self) -> Result<Option<StateBox>> {
        match (&self.goal, self.builtin()?) {
            (Some(g), _) => g.to_box().map(Some),
            (None, Some(s)) => Ok(Some(s.defaults().goal)),
            (None, None) => Ok(None),
        }
    }

    /// Period of each state dimension for the surrogate.
    pub fn periods(&self) -> Result<Vec<Option<f64>>> {
        let g = self.grid()?;
        Ok((0..g.dim()).map(|i| g.is_periodic(i).then(|| g.period(i))).collect())
    }

    pub fn padding(&self) -> Result<Vec<f64>> {
        let m = self.grid()?.dim();
        match self.true_map.padding.len() {
            0 => Ok(vec![0.0; m]),
            n if n == m => Ok(self.true_map.padding.clone()),
            n => Err(Error::Config(format!("true_map.padding has {n} entries, state has {m}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.flow_spec()?;
        let grid = self.grid()?;
        if spec.dim() != grid.dim() {
            return Err(Error::Config(format!(
                "system has dimension {}, grid has {}",
                spec.dim(),
                grid.dim()
            )));
        }
        if let Some(goal) = self.goal()? {
            if goal.dim() != grid.dim() {
                return Err(Error::Config("goal dimension differs from the grid".into()));
            }
        }
        if self.data.initial == 0 {
            return Err(Error::Config("data.initial must be at least 1".into()));
        }
        if self.data.trajectory == TrajectoryMode::Long && !(self.data.long_duration >= spec.tau) {
            return Err(Error::Config("data.long_duration must be at least tau".into()));
        }
        if !(self.data.noise_std >= 0.0) {
            return Err(Error::Config("data.noise_std must be non-negative".into()));
        }
        for d in [Some(self.delta.initial), self.delta.target].into_iter().flatten() {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::Config(format!("delta {d} outside (0, 1)")));
            }
        }
        if self.refine.rounds > 0 && self.refine.per_round == 0 {
            return Err(Error::Config("refine.per_round must be positive".into()));
        }
        if self.refine.scope == SamplingScope::TargetRoa && self.goal()?.is_none() {
            return Err(Error::Config("refine.scope = \"target_roa\" needs a goal".into()));
        }
        if self.truth.resolution < 2 {
            return Err(Error::Config("truth.resolution must be at least 2".into()));
        }
        if !(self.truth.horizon >= 0.0) {
            return Err(Error::Config("truth.horizon must be non-negative".into()));
        }
        if !(self.true_map.relative >= 0.0) {
            return Err(Error::Config("true_map.relative must be non-negative".into()));
        }
        self.padding()?;
        Ok(())
    }
}
