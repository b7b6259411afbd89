//! End-to-end runs: sample, fit, build the confidence map, extract the
//! Morse graph, optionally refine with more data, and score against a
//! ground-truth region of attraction.

mod config;
mod report;
mod truth;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{
    BoxSection, DataSection, DeltaSection, GridSection, PipelineConfig, RefineSection, SamplingScope, SystemSection,
    TrajectoryMode, TrueMapSection, TruthSection,
};
pub use report::{EvaluationReport, RoundRecord};
pub use truth::{ground_truth_roa, score, score_cells, GroundTruth, Score};

use crate::dynamics::{
    decompose_long_trajectory, extend_with_images, sample_short_trajectories, uniform_in, Propagator, TrajectoryDataset,
};
use crate::error::{Error, Result};
use crate::gp::{GpSettings, GpSurrogate};
use crate::grid::{CellId, CubicalGrid, StateBox};
use crate::morse::{morse_graph, MorseGraphResult};
use crate::mvmap::{build_true_map, gp_map_from_tables, GpMapTables, MultivaluedMap};

/// Stream-splitting for per-round seeds (SplitMix64 finalizer).
fn mix(seed: u64, round: usize, purpose: u64) -> u64 {
    let mut z = seed ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ purpose.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SAMPLE: u64 = 1;
const FIT: u64 = 2;

/// Reference region for a config's system and goal.
pub fn ground_truth(config: &PipelineConfig) -> Result<GroundTruth> {
    let goal = config
        .goal()?
        .ok_or_else(|| Error::Config("ground truth needs a goal region".into()))?;
    let dynamics = config.flow_spec()?.instantiate()?;
    ground_truth_roa(
        dynamics.as_ref(),
        &config.grid()?,
        &goal,
        config.truth.resolution,
        config.truth.horizon,
    )
}

/// Outcome of a true-dynamics analysis.
pub struct TrueAnalysis {
    pub map: MultivaluedMap,
    pub result: MorseGraphResult,
    pub report: EvaluationReport,
}

/// Morse graph from the true dynamics at every grid corner, with the
/// config's padding.
pub fn analyze_true(config: &PipelineConfig, truth: Option<&GroundTruth>) -> Result<TrueAnalysis> {
    config.validate()?;
    let grid = config.grid()?;
    let propagator = Propagator::new(config.flow_spec()?.instantiate()?);
    let map = build_true_map(&grid, &propagator, &config.padding()?, config.true_map.relative)?;
    let result = morse_graph(&map);
    let (roa_cells, s) = evaluate(&result, config.goal()?.as_ref(), truth)?;
    let report = EvaluationReport {
        config_hash: config.hash(),
        system: config.system.name.clone(),
        mode: "true".into(),
        history: vec![RoundRecord {
            round: 0,
            delta: 0.0,
            samples: 0,
            propagations: propagator.count(),
            sigma_bar: None,
            roa_ratio: s.map(|s| s.roa_ratio),
            fp_fraction: s.map(|s| s.fp_fraction),
            morse_nodes: result.nodes().len(),
            attractors: result.attractors().len(),
            roa_cells,
        }],
    };
    Ok(TrueAnalysis { map, result, report })
}

fn evaluate(
    result: &MorseGraphResult,
    goal: Option<&StateBox>,
    truth: Option<&GroundTruth>,
) -> Result<(Option<usize>, Option<Score>)> {
    let Some(goal) = goal else {
        return Ok((None, None));
    };
    let cells = result.roa_for_goal(goal)?.cells.len();
    let s = truth.map(|t| score(result, t, goal)).transpose()?;
    Ok((Some(cells), s))
}

/// Outcome of a surrogate analysis at one `δ`.
pub struct GpAnalysis {
    pub tables: GpMapTables,
    pub map: MultivaluedMap,
    pub result: MorseGraphResult,
    pub report: EvaluationReport,
}

/// Step 1 alone: the config's initial dataset.
pub fn initial_dataset(config: &PipelineConfig) -> Result<TrajectoryDataset> {
    config.validate()?;
    let propagator = Propagator::new(config.flow_spec()?.instantiate()?);
    initial_data(config, &config.grid()?, &propagator)
}

/// Step 2 alone: maximum-likelihood fit to `data`, seeded as in a full run.
pub fn fit_model(config: &PipelineConfig, data: &TrajectoryDataset) -> Result<GpSurrogate> {
    GpSurrogate::fit(data, &config.periods()?, &config.gp, mix(config.seed, 0, FIT))
}

/// Step 3 alone: confidence map and Morse graph of a fitted `model`. The
/// report charges one propagation per training pair.
pub fn analyze_gp(
    config: &PipelineConfig,
    model: &GpSurrogate,
    delta: f64,
    truth: Option<&GroundTruth>,
) -> Result<GpAnalysis> {
    config.validate()?;
    let grid = config.grid()?;
    let tables = GpMapTables::compute(&grid, model)?;
    let map = gp_map_from_tables(&grid, &tables, delta)?;
    let result = morse_graph(&map);
    let (roa_cells, s) = evaluate(&result, config.goal()?.as_ref(), truth)?;
    let report = EvaluationReport {
        config_hash: config.hash(),
        system: config.system.name.clone(),
        mode: "gp".into(),
        history: vec![RoundRecord {
            round: 0,
            delta,
            samples: model.len(),
            propagations: model.len() as u64,
            sigma_bar: Some(tables.mean_center_std()),
            roa_ratio: s.map(|s| s.roa_ratio),
            fp_fraction: s.map(|s| s.fp_fraction),
            morse_nodes: result.nodes().len(),
            attractors: result.attractors().len(),
            roa_cells,
        }],
    };
    Ok(GpAnalysis {
        tables,
        map,
        result,
        report,
    })
}

/// The surrogate-based method, one refinement round at a time.
pub struct Pipeline {
    config: PipelineConfig,
    grid: CubicalGrid,
    goal: Option<StateBox>,
    propagator: Propagator,
    data: TrajectoryDataset,
    model: GpSurrogate,
    tables: GpMapTables,
    map: MultivaluedMap,
    result: MorseGraphResult,
    truth: Option<GroundTruth>,
    history: Vec<RoundRecord>,
    /// Rounds of the current schedule already taken.
    scheduled: usize,
}

impl Pipeline {
    /// Steps 1 to 3: initial data, maximum-likelihood fit, map and Morse
    /// graph at the initial `δ`.
    pub fn start(config: PipelineConfig, truth: Option<GroundTruth>) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let propagator = Propagator::new(config.flow_spec()?.instantiate()?);
        let data = initial_data(&config, &grid, &propagator)?;
        let model = fit_model(&config, &data)?;
        Self::assemble(config, grid, propagator, data, model, truth, Vec::new())
    }

    /// Picks up a saved run: `history` ends with the state `data` and
    /// `model` describe. The next rounds follow `config`'s refinement plan
    /// and `δ` schedule.
    pub fn resume(
        config: PipelineConfig,
        data: TrajectoryDataset,
        model: GpSurrogate,
        history: Vec<RoundRecord>,
        truth: Option<GroundTruth>,
    ) -> Result<Self> {
        config.validate()?;
        if history.is_empty() {
            return Err(Error::InvalidArgument("resumed run has no history".into()));
        }
        let grid = config.grid()?;
        let propagator = Propagator::new(config.flow_spec()?.instantiate()?);
        Self::assemble(config, grid, propagator, data, model, truth, history)
    }

    fn assemble(
        config: PipelineConfig,
        grid: CubicalGrid,
        propagator: Propagator,
        data: TrajectoryDataset,
        model: GpSurrogate,
        truth: Option<GroundTruth>,
        history: Vec<RoundRecord>,
    ) -> Result<Self> {
        let delta = history.last().map_or(config.delta.initial, |r| r.delta);
        let tables = GpMapTables::compute(&grid, &model)?;
        let map = gp_map_from_tables(&grid, &tables, delta)?;
        let result = morse_graph(&map);
        let mut p = Pipeline {
            goal: config.goal()?,
            config,
            grid,
            propagator,
            data,
            model,
            tables,
            map,
            result,
            truth,
            history,
            scheduled: 0,
        };
        if p.history.is_empty() {
            let rec = p.record(0, delta)?;
            p.history.push(rec);
        }
        Ok(p)
    }

    fn record(&self, round: usize, delta: f64) -> Result<RoundRecord> {
        let (roa_cells, s) = evaluate(&self.result, self.goal.as_ref(), self.truth.as_ref())?;
        Ok(RoundRecord {
            round,
            delta,
            samples: self.data.len(),
            propagations: self.data.propagation_count,
            sigma_bar: Some(self.tables.mean_center_std()),
            roa_ratio: s.map(|s| s.roa_ratio),
            fp_fraction: s.map(|s| s.fp_fraction),
            morse_nodes: self.result.nodes().len(),
            attractors: self.result.attractors().len(),
            roa_cells,
        })
    }

    /// Rounds completed since the initial fit, across resumes.
    pub fn rounds_done(&self) -> usize {
        self.history.last().map_or(0, |r| r.round)
    }

    /// Runs the config's `refine.rounds` rounds.
    pub fn refine_all(&mut self) -> Result<()> {
        while self.scheduled < self.config.refine.rounds {
            self.refine_once()?;
        }
        Ok(())
    }

    /// Step 4: draw new initial states, propagate them, update the model
    /// and rebuild everything at the scheduled `δ`.
    pub fn refine_once(&mut self) -> Result<()> {
        let plan = self.config.refine.clone();
        let round = self.rounds_done() + 1;
        self.scheduled += 1;
        let delta = self.config.delta.at(self.scheduled, plan.rounds.max(self.scheduled));
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.config.seed, round, SAMPLE));
        let starts = match plan.scope {
            SamplingScope::Global => (0..plan.per_round)
                .map(|_| uniform_in(&mut rng, self.grid.bounds()))
                .collect(),
            SamplingScope::TargetRoa => self.target_starts(&mut rng, plan.per_round)?,
        };
        let before = self.propagator.count();
        extend_with_images(&self.propagator, &mut self.data, starts, &mut rng, self.config.data.noise_std)?;
        self.data.propagation_count += self.propagator.count() - before;
        self.model = if plan.refit_every > 0 && round.is_multiple_of(plan.refit_every) {
            let mut settings: GpSettings = self.config.gp.clone();
            settings.optimizer.restarts = 1;
            settings.optimizer.iterations = plan.refit_iterations;
            self.model.refit(&self.data, &settings, mix(self.config.seed, round, FIT))?
        } else {
            self.model.condition_on(&self.data)?
        };
        self.tables = GpMapTables::compute(&self.grid, &self.model)?;
        self.map = gp_map_from_tables(&self.grid, &self.tables, delta)?;
        self.result = morse_graph(&self.map);
        let rec = self.record(round, delta)?;
        self.history.push(rec);
        Ok(())
    }

    /// Half the points uniform over the goal's region of attraction, half
    /// over the one-cell shell of neighbouring cells outside it.
    fn target_starts(&self, rng: &mut ChaCha8Rng, count: usize) -> Result<Vec<Vec<f64>>> {
        let goal = self.goal.as_ref().expect("validated: target sampling has a goal");
        let roa = self.result.roa_for_goal(goal)?.cells;
        if roa.is_empty() {
            return Err(Error::Refinement(format!(
                "round {}: no attractor meets the goal, so the target region is empty (delta {})",
                self.rounds_done() + 1,
                self.history.last().map_or(f64::NAN, |r| r.delta)
            )));
        }
        let mut inside = vec![false; self.grid.cell_count()];
        for c in &roa {
            inside[c.0] = true;
        }
        let mut shell: Vec<CellId> = roa
            .iter()
            .flat_map(|&c| self.grid.neighbors(c))
            .filter(|n| !inside[n.0])
            .collect();
        shell.sort_unstable();
        shell.dedup();
        let in_roa = if shell.is_empty() { count } else { count - count / 2 };
        Ok((0..count)
            .map(|i| {
                let pool = if i < in_roa { &roa } else { &shell };
                let cell = pool[rng.gen_range(0..pool.len())];
                uniform_in(rng, &self.grid.cell_box(cell))
            })
            .collect())
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn grid(&self) -> &CubicalGrid {
        &self.grid
    }

    pub fn data(&self) -> &TrajectoryDataset {
        &self.data
    }

    pub fn model(&self) -> &GpSurrogate {
        &self.model
    }

    pub fn map(&self) -> &MultivaluedMap {
        &self.map
    }

    pub fn result(&self) -> &MorseGraphResult {
        &self.result
    }

    pub fn truth(&self) -> Option<&GroundTruth> {
        self.truth.as_ref()
    }

    pub fn report(&self) -> EvaluationReport {
        EvaluationReport {
            config_hash: self.config.hash(),
            system: self.config.system.name.clone(),
            mode: "gp".into(),
            history: self.history.clone(),
        }
    }

    /// Writes every artifact of the run into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg = dir.join(files::CONFIG);
        std::fs::write(&cfg, self.config.to_toml()).map_err(|e| Error::io(&cfg, e))?;
        self.data.write(&dir.join(files::DATASET))?;
        self.model.write(&dir.join(files::MODEL))?;
        self.map.write(&dir.join(files::MAP))?;
        self.result.write_dot(&dir.join(files::MORSE))?;
        self.result.write_raster(&dir.join(files::RASTER))?;
        self.report().write(&dir.join(files::REPORT))?;
        if let Some(t) = &self.truth {
            t.write(&dir.join(files::TRUTH))?;
        }
        Ok(())
    }

    /// Reopens a run saved by [`Pipeline::save`]. `config` replaces the
    /// stored one for the refinement plan but must describe the same
    /// system, grid and goal.
    pub fn load(dir: &Path, config: Option<PipelineConfig>) -> Result<Self> {
        let cfg_path = dir.join(files::CONFIG);
        let stored = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let stored = PipelineConfig::from_toml(&stored)?;
        let config = match config {
            Some(c) => {
                if c.flow_spec()? != stored.flow_spec()? || c.grid()? != stored.grid()? || c.goal()? != stored.goal()? {
                    return Err(Error::Config(
                        "refinement config describes a different system, grid or goal than the run".into(),
                    ));
                }
                c
            }
            None => stored,
        };
        let data = TrajectoryDataset::read(&dir.join(files::DATASET))?;
        let model = GpSurrogate::read(&dir.join(files::MODEL))?;
        let report = EvaluationReport::read(&dir.join(files::REPORT))?;
        let truth_path = dir.join(files::TRUTH);
        let truth = truth_path.exists().then(|| GroundTruth::read(&truth_path)).transpose()?;
        Pipeline::resume(config, data, model, report.history, truth)
    }
}

/// File names inside a run directory.
pub mod files {
    pub const CONFIG: &str = "config.toml";
    pub const DATASET: &str = "dataset.txt";
    pub const MODEL: &str = "model.txt";
    pub const MAP: &str = "map.txt";
    pub const MORSE: &str = "morse.dot";
    pub const RASTER: &str = "roa.txt";
    pub const REPORT: &str = "report.txt";
    pub const TRUTH: &str = "truth.txt";
}

fn initial_data(config: &PipelineConfig, grid: &CubicalGrid, propagator: &Propagator) -> Result<TrajectoryDataset> {
    let seed = mix(config.seed, 0, SAMPLE);
    match config.data.trajectory {
        TrajectoryMode::Short => {
            sample_short_trajectories(propagator, grid.bounds(), config.data.initial, seed, config.data.noise_std)
        }
        TrajectoryMode::Long => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = propagator.dynamics();
            let mut data = TrajectoryDataset::new(d.dim(), d.tau(), d.name());
            for _ in 0..config.data.initial {
                let x0 = uniform_in(&mut rng, grid.bounds());
                data.extend(decompose_long_trajectory(propagator, &x0, config.data.long_duration)?)?;
            }
            if data.is_empty() {
                return Err(Error::DegenerateData("every long rollout diverged immediately".into()));
            }
            Ok(data)
        }
    }
}

/// Runs steps 1 to 4 with the config's refinement plan.
pub fn run(config: &PipelineConfig, truth: Option<GroundTruth>) -> Result<Pipeline> {
    let mut p = Pipeline::start(config.clone(), truth)?;
    p.refine_all()?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arctan_config() -> PipelineConfig {
        let mut c = PipelineConfig::for_system("arctan-1d");
        c.data.initial = 30;
        c.gp.optimizer.restarts = 2;
        c.truth.horizon = 200.0;
        c.refine.per_round = 4;
        c.refine.refit_every = 2;
        c
    }

    #[test]
    fn zero_rounds_is_steps_one_to_three() {
        let c = arctan_config();
        let t = ground_truth(&c).unwrap();
        let p = run(&c, Some(t)).unwrap();
        let r = p.report();
        assert_eq!(r.rounds(), 0);
        assert_eq!(r.propagation_count(), 30);
        assert_eq!(r.roa_ratio(), Some(1.0));
        assert_eq!(r.fp_fraction(), Some(0.0));
        let alone = morse_graph(&crate::mvmap::build_gp_map(p.grid(), p.model(), c.delta.initial).unwrap());
        assert_eq!(alone.roa(), p.result().roa());
    }

    #[test]
    fn refinement_is_deterministic_and_counts_data() {
        let mut c = arctan_config();
        c.refine.rounds = 3;
        c.refine.scope = SamplingScope::TargetRoa;
        c.delta = DeltaSection {
            initial: 0.5,
            target: Some(0.05),
        };
        let a = run(&c, None).unwrap().report();
        let b = run(&c, None).unwrap().report();
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 4);
        assert_eq!(a.propagation_count(), 30 + 3 * 4);
        assert!((a.history[3].delta - 0.05).abs() < 1e-12);
        assert!(a.roa_ratio().is_none());
    }

    #[test]
    fn save_load_and_continue() {
        let dir = std::env::temp_dir().join(format!("gpmorse-pipeline-{}", std::process::id()));
        let mut c = arctan_config();
        c.refine.rounds = 2;
        let p = run(&c, None).unwrap();
        p.save(&dir).unwrap();
        let mut more = Pipeline::load(&dir, None).unwrap();
        assert_eq!(more.rounds_done(), 2);
        more.refine_all().unwrap();
        assert_eq!(more.report().rounds(), 4);
        // a continued run matches one that ran four rounds straight, apart
        // from the schedule position
        let mut c4 = c.clone();
        c4.refine.rounds = 4;
        let straight = run(&c4, None).unwrap();
        assert_eq!(straight.data(), more.data());
        let mut other = c.clone();
        other.system.name = "identity".into();
        assert!(Pipeline::load(&dir, Some(other)).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
