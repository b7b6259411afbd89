use std::path::Path;

use crate::dynamics::Dynamics;
use crate::error::{check_dim, Error, Result};
use crate::grid::{CellId, CubicalGrid, StateBox};
use crate::morse::{raster_from_text, raster_to_text, MorseGraphResult};
use crate::par::map_range;

const INSIDE: i64 = 1;
const OUTSIDE: i64 = 0;
const NON_FINITE: i64 = -1;

/// Reference region of attraction on a refined copy of the analysis grid.
/// Its rollouts are never charged to a method's propagation budget.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    grid: CubicalGrid,
    codes: Vec<i64>,
    substeps: u64,
}

/// Rolls out the true dynamics from every fine-cell center, one integrator
/// step at a time, until the state enters `goal` (inside) or `horizon`
/// expires (outside). Leaving the domain does not end a rollout; a
/// non-finite state does, and counts as outside.
pub fn ground_truth_roa(
    dynamics: &dyn Dynamics,
    grid: &CubicalGrid,
    goal: &StateBox,
    resolution: usize,
    horizon: f64,
) -> Result<GroundTruth> {
    check_dim(grid.dim(), dynamics.dim())?;
    check_dim(grid.dim(), goal.dim())?;
    if resolution < 2 {
        return Err(Error::InvalidArgument("ground-truth resolution must be at least 2".into()));
    }
    if !(horizon >= 0.0) {
        return Err(Error::InvalidArgument("horizon must be non-negative".into()));
    }
    let counts = grid.counts().iter().map(|n| n * resolution).collect();
    let fine = CubicalGrid::new(grid.bounds().clone(), counts, grid.periodic().to_vec())?;
    let steps = (horizon / dynamics.substep_duration() - 1e-9).ceil().max(0.0) as u64;
    let rolled = map_range(fine.cell_count(), |c| {
        let mut x = fine.center(CellId(c));
        for k in 0..=steps {
            if goal.contains(&fine.wrap(&x)) {
                return Ok((INSIDE, k));
            }
            if k == steps {
                break;
            }
            match dynamics.substep(&x) {
                Ok(y) if y.iter().all(|v| v.is_finite()) => x = y,
                Ok(_) | Err(Error::NonFinite { .. }) => return Ok((NON_FINITE, k + 1)),
                Err(e) => return Err(e),
            }
        }
        Ok((OUTSIDE, steps))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let substeps = rolled.iter().map(|r| r.1).sum();
    Ok(GroundTruth {
        grid: fine,
        codes: rolled.into_iter().map(|r| r.0).collect(),
        substeps,
    })
}

impl GroundTruth {
    pub fn grid(&self) -> &CubicalGrid {
        &self.grid
    }

    pub fn inside(&self, cell: CellId) -> bool {
        self.codes[cell.0] == INSIDE
    }

    /// Cells whose rollout produced a non-finite state.
    pub fn flagged(&self) -> usize {
        self.codes.iter().filter(|&&c| c == NON_FINITE).count()
    }

    /// Fraction of the domain inside the reference region.
    pub fn inside_fraction(&self) -> f64 {
        self.codes.iter().filter(|&&c| c == INSIDE).count() as f64 / self.codes.len() as f64
    }

    /// Integrator steps spent; zero for a truth read back from disk.
    pub fn substeps(&self) -> u64 {
        self.substeps
    }

    /// Raster with codes `1` inside, `0` outside, `-1` non-finite.
    pub fn to_text(&self) -> String {
        raster_to_text(&self.grid, &self.codes, "truth")
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let (grid, kind, codes) = raster_from_text(text, origin)?;
        if kind != "truth" {
            return Err(Error::parse(origin, 1, format!("expected a truth raster, found kind={kind}")));
        }
        if let Some(bad) = codes.iter().find(|c| ![INSIDE, OUTSIDE, NON_FINITE].contains(c)) {
            return Err(Error::parse(origin, 0, format!("truth label {bad} not in {{1, 0, -1}}")));
        }
        Ok(GroundTruth { grid, codes, substeps: 0 })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GroundTruth::from_text(&text, path)
    }
}

/// Estimated region against the reference, as volume fractions measured on
/// the fine raster.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score {
    /// `|estimate ∩ truth| / |truth|`; 1 when the truth is empty.
    pub roa_ratio: f64,
    /// `|estimate \ truth| / |X|`.
    pub fp_fraction: f64,
}

/// Scores a per-cell membership mask of `grid` against `truth`. Each fine
/// cell takes the membership of the analysis cell holding its center.
pub fn score_cells(grid: &CubicalGrid, estimate: &[bool], truth: &GroundTruth) -> Result<Score> {
    check_dim(grid.cell_count(), estimate.len())?;
    let fine = truth.grid();
    if fine.bounds() != grid.bounds() || fine.periodic() != grid.periodic() {
        return Err(Error::InvalidArgument("truth raster covers a different domain".into()));
    }
    let (mut hit, mut truth_in, mut fp) = (0usize, 0usize, 0usize);
    for c in fine.cells() {
        let cell = grid.locate(&fine.center(c))?.expect("fine centers lie inside the domain");
        let est = estimate[cell.0];
        let tru = truth.inside(c);
        truth_in += tru as usize;
        hit += (est && tru) as usize;
        fp += (est && !tru) as usize;
    }
    let total = fine.cell_count() as f64;
    Ok(Score {
        roa_ratio: if truth_in == 0 { 1.0 } else { hit as f64 / truth_in as f64 },
        fp_fraction: fp as f64 / total,
    })
}

/// Scores the region of the attractors meeting `goal`.
pub fn score(result: &MorseGraphResult, truth: &GroundTruth, goal: &StateBox) -> Result<Score> {
    let roa = result.roa_for_goal(goal)?;
    let mut mask = vec![false; result.grid().cell_count()];
    for c in roa.cells {
        mask[c.0] = true;
    }
    score_cells(result.grid(), &mask, truth)
}
