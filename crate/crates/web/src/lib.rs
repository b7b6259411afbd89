//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Three operations: the five-cell arctan Morse graph, the true-dynamics
//! region-of-attraction raster, and the surrogate raster whose confidence
//! parameter can be moved without refitting.

use gpmorse::dynamics::{BuiltinFlow, Propagator, System};
use gpmorse::gp::{GpSettings, GpSurrogate};
use gpmorse::morse::{morse_graph, MorseGraphResult, RoaLabel};
use gpmorse::mvmap::{build_true_map, gp_map_from_tables, GpMapTables};
use gpmorse::pipeline::PipelineConfig;
use gpmorse::{CubicalGrid, StateBox};
use std::sync::Arc;
use wasm_bindgen::prelude::*;

fn js(e: gpmorse::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Cell labels for drawing: `k >= 0` attractor index (the goal's attractor
/// is reported by [`Scene::goal_labels`]), `-1` uncertain, `-2` escaped.
fn labels(result: &MorseGraphResult) -> Vec<i32> {
    result.roa().iter().map(|l| l.code() as i32).collect()
}

/// 1 for cells in the goal's region of attraction, 0 elsewhere.
fn goal_mask(result: &MorseGraphResult, goal: &StateBox) -> Result<Vec<u8>, JsError> {
    let roa = result.roa_for_goal(goal).map_err(js)?;
    let mut mask = vec![0u8; result.grid().cell_count()];
    for c in roa.cells {
        mask[c.0] = 1;
    }
    Ok(mask)
}

/// The arctan example on five cells over [-3, 3]: Graphviz text of the
/// Morse graph followed by one line with each cell's label.
#[wasm_bindgen]
pub fn arctan_example() -> Result<String, JsError> {
    let system = System::Arctan;
    let grid = system.defaults().grid();
    let flow = BuiltinFlow::with_default_step(system, 1.0).map_err(js)?;
    let map = build_true_map(&grid, &Propagator::new(Arc::new(flow)), &[0.0], 0.0).map_err(js)?;
    let result = morse_graph(&map);
    let names = ["a", "b", "c", "d", "e"];
    let cells: Vec<String> = result
        .roa()
        .iter()
        .zip(names)
        .map(|(l, n)| match l {
            RoaLabel::Attractor(i) => format!("{n}: RoA of node {i}"),
            RoaLabel::Uncertain => format!("{n}: uncertain"),
            RoaLabel::Escaped => format!("{n}: escaped"),
        })
        .collect();
    Ok(format!("{}\n{}", result.to_dot(), cells.join("\n")))
}

/// A two-dimensional system on a grid, with a fitted surrogate whose
/// predictions are cached so that changing `δ` only rebuilds the map.
#[wasm_bindgen]
pub struct Scene {
    grid: CubicalGrid,
    goal: StateBox,
    config: PipelineConfig,
    tables: GpMapTables,
    samples: usize,
}

#[wasm_bindgen]
impl Scene {
    /// Samples `samples` one-step pairs of the named built-in system and
    /// fits the surrogate. `cells` per dimension overrides the default
    /// grid.
    #[wasm_bindgen(constructor)]
    pub fn new(system: &str, cells: usize, samples: usize, seed: u64) -> Result<Scene, JsError> {
        let mut config = PipelineConfig::for_system(system);
        config.seed = seed;
        config.data.initial = samples;
        config.gp = GpSettings::default();
        config.gp.optimizer.restarts = 2;
        config.gp.optimizer.iterations = 80;
        let defaults = System::from_name(system, None).map_err(js)?.defaults();
        if defaults.domain.dim() != 2 {
            return Err(JsError::new("the demo draws two-dimensional systems only"));
        }
        let grid = CubicalGrid::new(defaults.domain.clone(), vec![cells; 2], defaults.periodic.clone()).map_err(js)?;
        config.grid = Some(gpmorse::pipeline::GridSection {
            lower: defaults.domain.lower().to_vec(),
            upper: defaults.domain.upper().to_vec(),
            subdivisions: None,
            cells: Some(vec![cells; 2]),
            periodic: Some(defaults.periodic.clone()),
        });
        let data = gpmorse::pipeline::initial_dataset(&config).map_err(js)?;
        let model: GpSurrogate = gpmorse::pipeline::fit_model(&config, &data).map_err(js)?;
        let tables = GpMapTables::compute(&grid, &model).map_err(js)?;
        Ok(Scene {
            grid,
            goal: defaults.goal,
            config,
            tables,
            samples: data.len(),
        })
    }

    pub fn width(&self) -> usize {
        self.grid.counts()[0]
    }

    pub fn height(&self) -> usize {
        self.grid.counts()[1]
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Mean predictive standard deviation over cell centers.
    pub fn sigma_bar(&self) -> f64 {
        self.tables.mean_center_std()
    }

    /// Per-cell labels of the surrogate map at confidence parameter `delta`.
    pub fn gp_labels(&self, delta: f64) -> Result<Vec<i32>, JsError> {
        let map = gp_map_from_tables(&self.grid, &self.tables, delta).map_err(js)?;
        Ok(labels(&morse_graph(&map)))
    }

    /// Goal region-of-attraction mask of the surrogate map at `delta`.
    pub fn gp_goal(&self, delta: f64) -> Result<Vec<u8>, JsError> {
        let map = gp_map_from_tables(&self.grid, &self.tables, delta).map_err(js)?;
        goal_mask(&morse_graph(&map), &self.goal)
    }

    /// Goal region-of-attraction mask from the true dynamics at every
    /// grid corner, with the config's padding.
    pub fn true_goal(&self) -> Result<Vec<u8>, JsError> {
        let flow = self.config.flow_spec().and_then(|s| s.instantiate()).map_err(js)?;
        let padding = self.config.padding().map_err(js)?;
        let map = build_true_map(&self.grid, &Propagator::new(flow), &padding, self.config.true_map.relative)
            .map_err(js)?;
        goal_mask(&morse_graph(&map), &self.goal)
    }
}
