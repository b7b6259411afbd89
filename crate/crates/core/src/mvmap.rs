//! Combinatorial multivalued maps on a [`CubicalGrid`].
//!
//! Two builders: the true-dynamics map bounds the images of each cell's
//! corners, and the GP map unions the box of predicted corner means with
//! the confidence hypercube at the cell center. A cell whose image box
//! leaves the non-periodic bounds (or is non-finite) is marked escaped and
//! gets no successors.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::Propagator;
use crate::error::{check_dim, Error, Result};
use crate::gp::{confidence, hypercube, GpSurrogate};
use crate::grid::{CellId, CubicalGrid, StateBox};
use crate::par::map_range;

#[derive(Clone, Debug, PartialEq)]
pub enum MapMode {
    /// Corner images of the true flow. Each cell's bounding box of width
    /// `w_i` is inflated by `padding[i] + relative · w_i` on both sides
    /// along dimension `i`.
    TrueDynamics { padding: Vec<f64>, relative: f64 },
    /// GP corner means plus the joint `1 - δ` hypercube at the center.
    GpConfidence { delta: f64 },
}

impl MapMode {
    fn header(&self) -> String {
        match self {
            MapMode::TrueDynamics { padding, relative } => {
                let p: Vec<String> = padding.iter().map(|v| format!("{v:?}")).collect();
                format!("mode=true padding={} relative={relative:?}", p.join(","))
            }
            MapMode::GpConfidence { delta } => format!("mode=gp delta={delta:?}"),
        }
    }
}

/// Successor lists in compressed rows: cell `c` maps to
/// `targets[offsets[c]..offsets[c + 1]]`, sorted and unique.
#[derive(Clone, Debug, PartialEq)]
pub struct MultivaluedMap {
    grid: CubicalGrid,
    mode: MapMode,
    offsets: Vec<usize>,
    targets: Vec<CellId>,
    escaped: Vec<bool>,
}

impl MultivaluedMap {
    /// Validates and packs explicit successor lists.
    pub fn from_adjacency(grid: CubicalGrid, mode: MapMode, adjacency: Vec<Vec<CellId>>, escaped: Vec<bool>) -> Result<Self> {
        let n = grid.cell_count();
        check_dim(n, adjacency.len())?;
        check_dim(n, escaped.len())?;
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for (c, succ) in adjacency.into_iter().enumerate() {
            if succ.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!("successors of cell {c} not sorted and unique")));
            }
            if succ.last().is_some_and(|s| s.0 >= n) {
                return Err(Error::InvalidArgument(format!("successor of cell {c} out of range")));
            }
            if escaped[c] && !succ.is_empty() {
                return Err(Error::InvalidArgument(format!("escaped cell {c} has successors")));
            }
            targets.extend(succ);
            offsets.push(targets.len());
        }
        Ok(MultivaluedMap {
            grid,
            mode,
            offsets,
            targets,
            escaped,
        })
    }

    pub fn grid(&self) -> &CubicalGrid {
        &self.grid
    }

    pub fn mode(&self) -> &MapMode {
        &self.mode
    }

    pub fn cell_count(&self) -> usize {
        self.escaped.len()
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    pub fn successors(&self, cell: CellId) -> &[CellId] {
        &self.targets[self.offsets[cell.0]..self.offsets[cell.0 + 1]]
    }

    pub fn is_escaped(&self, cell: CellId) -> bool {
        self.escaped[cell.0]
    }

    pub fn escaped_cells(&self) -> Vec<CellId> {
        (0..self.cell_count()).filter(|&c| self.escaped[c]).map(CellId).collect()
    }

    /// Edge list: header lines, then `a -> b` per edge and `escaped c` per
    /// escaped cell.
    pub fn to_text(&self) -> String {
        let mut s = format!("# gpmorse-map {}\n", self.mode.header());
        writeln!(s, "# grid {}", self.grid.header()).unwrap();
        writeln!(
            s,
            "# cells={} edges={} escaped={}",
            self.cell_count(),
            self.edge_count(),
            self.escaped.iter().filter(|&&e| e).count()
        )
        .unwrap();
        for c in 0..self.cell_count() {
            for t in self.successors(CellId(c)) {
                writeln!(s, "{c} -> {t}").unwrap();
            }
        }
        for c in self.escaped_cells() {
            writeln!(s, "escaped {c}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::parse(origin, line, msg);
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (_, head) = lines.next().ok_or_else(|| err(1, "empty map file".into()))?;
        let fields = head
            .strip_prefix("# gpmorse-map")
            .ok_or_else(|| err(1, "missing '# gpmorse-map' header".into()))?;
        let get = |key: &str| {
            fields
                .split_whitespace()
                .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
                .ok_or_else(|| err(1, format!("header lacks {key}")))
        };
        let mode = match get("mode")? {
            "true" => MapMode::TrueDynamics {
                padding: get("padding")?
                    .split(',')
                    .map(|t| t.parse::<f64>().map_err(|_| err(1, format!("bad padding '{t}'"))))
                    .collect::<Result<_>>()?,
                relative: get("relative")?.parse().map_err(|_| err(1, "bad relative padding".into()))?,
            },
            "gp" => MapMode::GpConfidence {
                delta: get("delta")?.parse().map_err(|_| err(1, "bad delta".into()))?,
            },
            other => return Err(err(1, format!("unknown mode '{other}'"))),
        };
        let (ln, gl) = lines.next().ok_or_else(|| err(2, "missing grid line".into()))?;
        let grid = gl
            .strip_prefix("# grid")
            .ok_or_else(|| err(ln, "missing '# grid' line".into()))
            .and_then(|g| CubicalGrid::from_header(g).map_err(|e| err(ln, e.to_string())))?;
        let n = grid.cell_count();
        let mut adjacency = vec![Vec::new(); n];
        let mut escaped = vec![false; n];
        let cell = |ln: usize, t: &str| match t.parse::<usize>() {
            Ok(c) if c < n => Ok(CellId(c)),
            _ => Err(err(ln, format!("bad cell id '{t}'"))),
        };
        for (ln, l) in lines {
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            if let Some(c) = l.strip_prefix("escaped ") {
                escaped[cell(ln, c.trim())?.0] = true;
            } else if let Some((a, b)) = l.split_once("->") {
                let a = cell(ln, a.trim())?;
                adjacency[a.0].push(cell(ln, b.trim())?);
            } else {
                return Err(err(ln, format!("unrecognized line '{l}'")));
            }
        }
        for succ in adjacency.iter_mut() {
            succ.sort_unstable();
            succ.dedup();
        }
        MultivaluedMap::from_adjacency(grid, mode, adjacency, escaped).map_err(|e| err(0, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MultivaluedMap::from_text(&text, path)
    }
}

/// Shifts periodic coordinates of `points` by whole periods so each lies
/// within half a period of the first point. Bounding boxes then stay local
/// instead of spanning the seam.
fn unwrap_relative(grid: &CubicalGrid, points: &mut [Vec<f64>]) {
    for i in 0..grid.dim() {
        if !grid.is_periodic(i) {
            continue;
        }
        let p = grid.period(i);
        let r = points[0][i];
        for pt in points.iter_mut().skip(1) {
            pt[i] = r + (pt[i] - r + 0.5 * p).rem_euclid(p) - 0.5 * p;
        }
    }
}

struct CellImage {
    succ: Vec<CellId>,
    escaped: bool,
}

fn cells_of(grid: &CubicalGrid, boxes: &[StateBox]) -> Result<CellImage> {
    let mut succ = Vec::new();
    for b in boxes {
        let hit = grid.cells_intersecting(b)?;
        if hit.clipped {
            return Ok(CellImage {
                succ: Vec::new(),
                escaped: true,
            });
        }
        succ.extend(hit.cells);
    }
    succ.sort_unstable();
    succ.dedup();
    Ok(CellImage { succ, escaped: false })
}

fn assemble(grid: &CubicalGrid, mode: MapMode, images: Vec<Result<CellImage>>) -> Result<MultivaluedMap> {
    let mut adjacency = Vec::with_capacity(images.len());
    let mut escaped = Vec::with_capacity(images.len());
    for im in images {
        let im = im?;
        adjacency.push(im.succ);
        escaped.push(im.escaped);
    }
    MultivaluedMap::from_adjacency(grid.clone(), mode, adjacency, escaped)
}

/// True-dynamics map: `φ_τ` is evaluated once per distinct grid corner, so
/// the propagator count grows by exactly `grid.corner_count()`.
///
/// `relative` scales padding with the spread of each cell's corner images,
/// which tracks the local stretching of the flow where an absolute padding
/// would have to cover the worst cell everywhere.
pub fn build_true_map(grid: &CubicalGrid, propagator: &Propagator, padding: &[f64], relative: f64) -> Result<MultivaluedMap> {
    check_dim(grid.dim(), propagator.dim())?;
    check_dim(grid.dim(), padding.len())?;
    if padding.iter().chain([&relative]).any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidArgument("padding must be finite and non-negative".into()));
    }
    let images = map_range(grid.corner_count(), |id| match propagator.flow(&grid.corner_point(id)) {
        Ok(y) => Ok(Some(y)),
        Err(Error::NonFinite { .. }) => Ok(None),
        Err(e) => Err(e),
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let cells = map_range(grid.cell_count(), |c| {
        let ids = grid.corner_ids(CellId(c));
        let Some(mut pts) = ids.iter().map(|&id| images[id].clone()).collect::<Option<Vec<_>>>() else {
            return Ok(CellImage {
                succ: Vec::new(),
                escaped: true,
            });
        };
        unwrap_relative(grid, &mut pts);
        let hull = StateBox::hull(pts.iter().map(Vec::as_slice)).expect("2^M corners");
        let pad: Vec<f64> = (0..grid.dim()).map(|i| padding[i] + relative * hull.width(i)).collect();
        cells_of(grid, &[hull.inflate(&pad)])
    });
    assemble(
        grid,
        MapMode::TrueDynamics {
            padding: padding.to_vec(),
            relative,
        },
        cells,
    )
}

/// Surrogate predictions behind a GP map: means at every lattice corner,
/// means and standard deviations at every cell center. They do not depend
/// on `δ`, so one table serves any number of confidence levels.
#[derive(Clone, Debug)]
pub struct GpMapTables {
    corner_mu: Vec<f64>,
    center_mu: Vec<f64>,
    center_sd: Vec<f64>,
}

impl GpMapTables {
    pub fn compute(grid: &CubicalGrid, model: &GpSurrogate) -> Result<Self> {
        let m = grid.dim();
        check_dim(m, model.dim())?;
        if (0..m).any(|i| model.periods()[i].is_some() != grid.is_periodic(i)) {
            return Err(Error::InvalidArgument("model and grid disagree on periodic dimensions".into()));
        }
        let corners: Vec<f64> = (0..grid.corner_count()).flat_map(|id| grid.corner_point(id)).collect();
        let corner_mu = model.predict_batch(&corners, false)?.mean;
        let centers: Vec<f64> = grid.cells().flat_map(|c| grid.center(c)).collect();
        let at_center = model.predict_batch(&centers, true)?;
        Ok(GpMapTables {
            corner_mu,
            center_mu: at_center.mean,
            center_sd: at_center.std.expect("requested"),
        })
    }

    /// Row-major `cells × M` predictive standard deviations at centers.
    pub fn center_std(&self) -> &[f64] {
        &self.center_sd
    }

    pub fn center_mean(&self) -> &[f64] {
        &self.center_mu
    }

    /// Average predictive standard deviation over centers and outputs.
    pub fn mean_center_std(&self) -> f64 {
        self.center_sd.iter().sum::<f64>() / self.center_sd.len() as f64
    }
}

/// Pointwise confidence map from a fitted surrogate. Consumes no
/// true-dynamics evaluations.
pub fn build_gp_map(grid: &CubicalGrid, model: &GpSurrogate, delta: f64) -> Result<MultivaluedMap> {
    confidence::check_delta(delta)?;
    gp_map_from_tables(grid, &GpMapTables::compute(grid, model)?, delta)
}

/// [`build_gp_map`] from precomputed predictions.
pub fn gp_map_from_tables(grid: &CubicalGrid, tables: &GpMapTables, delta: f64) -> Result<MultivaluedMap> {
    let m = grid.dim();
    if tables.center_mu.len() != grid.cell_count() * m || tables.corner_mu.len() != grid.corner_count() * m {
        return Err(Error::InvalidArgument("prediction tables were computed for another grid".into()));
    }
    let z = confidence::z_for(delta, m)?;
    let cells = map_range(grid.cell_count(), |c| {
        let cell = CellId(c);
        let corner_pts = grid.corners(cell);
        let mut pts: Vec<Vec<f64>> = grid
            .corner_ids(cell)
            .iter()
            .zip(&corner_pts)
            .map(|(&id, at)| {
                // lattice corners of periodic dims may sit one period away
                // from this cell's corner; the mean moves with the input
                let mut mu = tables.corner_mu[id * m..(id + 1) * m].to_vec();
                let lattice = grid.corner_point(id);
                for i in 0..m {
                    if grid.is_periodic(i) {
                        mu[i] += at[i] - lattice[i];
                    }
                }
                mu
            })
            .collect();
        unwrap_relative(grid, &mut pts);
        let r = StateBox::hull(pts.iter().map(Vec::as_slice)).expect("2^M corners");
        let e = hypercube(&tables.center_mu[c * m..(c + 1) * m], &tables.center_sd[c * m..(c + 1) * m], z);
        cells_of(grid, &[r, e])
    });
    assemble(grid, MapMode::GpConfidence { delta }, cells)
}

/// A sampled image the map fails to cover.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub cell: CellId,
    pub x: Vec<f64>,
    pub image: Vec<f64>,
}

/// Dense-sampling check of the outer-approximation property: for every
/// non-escaped cell, `samples` uniform points are pushed through `f`, and
/// each image must lie in the closed box of some successor (after wrapping).
/// `f` returning `None` counts as a violation.
pub fn uncovered_images<F>(map: &MultivaluedMap, samples: usize, seed: u64, f: F) -> Vec<Violation>
where
    F: Fn(&[f64]) -> Option<Vec<f64>> + Sync + Send,
{
    let grid = map.grid();
    let per_cell = map_range(map.cell_count(), |c| {
        let cell = CellId(c);
        if map.is_escaped(cell) {
            return Vec::new();
        }
        let b = grid.cell_box(cell);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (c as u64).wrapping_mul(0x2545_F491_4F6C_DD1D));
        let succ = map.successors(cell);
        let mut bad = Vec::new();
        for _ in 0..samples {
            let x: Vec<f64> = (0..grid.dim()).map(|i| rng.gen_range(b.lower()[i]..=b.upper()[i])).collect();
            let covered = match f(&x) {
                Some(y) => {
                    let w = grid.wrap(&y);
                    let hit = grid.locate(&y).ok().flatten();
                    hit.is_some_and(|h| succ.binary_search(&h).is_ok())
                        || succ.iter().any(|&s| grid.cell_box(s).contains(&w))
                }
                None => false,
            };
            if !covered {
                let image = f(&x).unwrap_or_default();
                bad.push(Violation { cell, x, image });
            }
        }
        bad
    });
    per_cell.into_iter().flatten().collect()
}
