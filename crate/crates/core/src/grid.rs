//! Uniform cubical decomposition of an orthotope, with optional periodic
//! dimensions.
//!
//! Cells are numbered in mixed radix with dimension 0 varying fastest:
//! `id = i_0 + n_0 * (i_1 + n_1 * (i_2 + ...))`. Cell `k` along dimension
//! `i` spans `[lower_i + k * w_i, lower_i + (k + 1) * w_i]`, and every
//! geometric quantity (faces, corners, centers) is produced by that one
//! construction formula so shared faces are bit-identical between
//! neighbouring cells.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Closed axis-aligned box `[lower, upper]`. Degenerate extents
/// (`lower[i] == upper[i]`) are allowed, so a single point is a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl StateBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidBox("zero-dimensional box".into()));
        }
        check_dim(lower.len(), upper.len())?;
        for (i, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidBox(format!("non-finite bound in dimension {i}")));
            }
            if lo > hi {
                return Err(Error::InvalidBox(format!(
                    "lower {lo} exceeds upper {hi} in dimension {i}"
                )));
            }
        }
        Ok(StateBox { lower, upper })
    }

    pub fn point(x: &[f64]) -> Result<Self> {
        StateBox::new(x.to_vec(), x.to_vec())
    }

    /// Smallest box containing every point. `None` for an empty iterator.
    pub fn hull<'a>(points: impl IntoIterator<Item = &'a [f64]>) -> Option<Self> {
        let mut iter = points.into_iter();
        let first = iter.next()?;
        let mut lower = first.to_vec();
        let mut upper = first.to_vec();
        for p in iter {
            for i in 0..lower.len() {
                lower[i] = lower[i].min(p[i]);
                upper[i] = upper[i].max(p[i]);
            }
        }
        Some(StateBox { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&lo, &hi))| lo <= v && v <= hi)
    }

    /// Closed-set intersection test.
    pub fn intersects(&self, other: &StateBox) -> bool {
        (0..self.dim()).all(|i| self.lower[i] <= other.upper[i] && other.lower[i] <= self.upper[i])
    }

    pub fn contains_box(&self, other: &StateBox) -> bool {
        (0..self.dim()).all(|i| self.lower[i] <= other.lower[i] && other.upper[i] <= self.upper[i])
    }

    /// Grows the box by `pad[i]` on both sides of dimension `i`.
    pub fn inflate(&self, pad: &[f64]) -> StateBox {
        StateBox {
            lower: self.lower.iter().zip(pad).map(|(v, p)| v - p).collect(),
            upper: self.upper.iter().zip(pad).map(|(v, p)| v + p).collect(),
        }
    }

    pub fn union(&self, other: &StateBox) -> StateBox {
        StateBox {
            lower: self.lower.iter().zip(&other.lower).map(|(a, b)| a.min(*b)).collect(),
            upper: self.upper.iter().zip(&other.upper).map(|(a, b)| a.max(*b)).collect(),
        }
    }
}

/// Index of a cell in a [`CubicalGrid`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId(pub usize);

impl CellId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for CellId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Result of [`CubicalGrid::cells_intersecting`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Intersection {
    /// Sorted, unique.
    pub cells: Vec<CellId>,
    /// Part of the query box lies outside a non-periodic bound.
    pub clipped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CubicalGrid {
    bounds: StateBox,
    counts: Vec<usize>,
    periodic: Vec<bool>,
    widths: Vec<f64>,
    total: usize,
}

impl CubicalGrid {
    /// Grid with `counts[i]` equal cells along dimension `i`.
    pub fn new(bounds: StateBox, counts: Vec<usize>, periodic: Vec<bool>) -> Result<Self> {
        let dim = bounds.dim();
        check_dim(dim, counts.len())?;
        check_dim(dim, periodic.len())?;
        for i in 0..dim {
            if bounds.width(i) <= 0.0 {
                return Err(Error::InvalidGrid(format!("empty extent in dimension {i}")));
            }
            if counts[i] == 0 {
                return Err(Error::InvalidGrid(format!("zero cells in dimension {i}")));
            }
        }
        let total = counts
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .filter(|&t| t <= u32::MAX as usize)
            .ok_or_else(|| Error::InvalidGrid("too many cells".into()))?;
        let widths = (0..dim).map(|i| bounds.width(i) / counts[i] as f64).collect();
        Ok(CubicalGrid {
            bounds,
            counts,
            periodic,
            widths,
            total,
        })
    }

    /// Grid with `2^exponents[i]` cells along dimension `i`.
    pub fn dyadic(bounds: StateBox, exponents: &[u32], periodic: Vec<bool>) -> Result<Self> {
        let counts = exponents
            .iter()
            .map(|&k| {
                if k >= 24 {
                    Err(Error::InvalidGrid(format!("subdivision exponent {k} too large")))
                } else {
                    Ok(1usize << k)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        CubicalGrid::new(bounds, counts, periodic)
    }

    /// One-line description `lower=.. upper=.. counts=.. periodic=..` used in
    /// export headers; [`CubicalGrid::from_header`] reads it back exactly.
    pub fn header(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        format!(
            "lower={} upper={} counts={} periodic={}",
            join(self.bounds.lower.iter().map(|v| format!("{v:?}")).collect()),
            join(self.bounds.upper.iter().map(|v| format!("{v:?}")).collect()),
            join(self.counts.iter().map(|v| v.to_string()).collect()),
            join(self.periodic.iter().map(|&p| u8::from(p).to_string()).collect()),
        )
    }

    /// Reads the fields written by [`CubicalGrid::header`]; other
    /// `key=value` tokens are ignored.
    pub fn from_header(text: &str) -> Result<Self> {
        let bad = |what: &str| Error::InvalidGrid(format!("bad grid header field '{what}'"));
        let list = |k: &str, v: &str| -> Result<Vec<f64>> {
            v.split(',').map(|t| t.parse::<f64>().map_err(|_| bad(k))).collect()
        };
        let (mut lower, mut upper, mut counts, mut periodic) = (None, None, None, None);
        for kv in text.split_whitespace() {
            let Some((k, v)) = kv.split_once('=') else { continue };
            match k {
                "lower" => lower = Some(list(k, v)?),
                "upper" => upper = Some(list(k, v)?),
                "counts" => {
                    let c = v.split(',').map(|t| t.parse::<usize>().map_err(|_| bad(k)));
                    counts = Some(c.collect::<Result<Vec<_>>>()?);
                }
                "periodic" => {
                    let p = v.split(',').map(|t| match t {
                        "0" => Ok(false),
                        "1" => Ok(true),
                        _ => Err(bad(k)),
                    });
                    periodic = Some(p.collect::<Result<Vec<_>>>()?);
                }
                _ => {}
            }
        }
        let bounds = StateBox::new(lower.ok_or_else(|| bad("lower"))?, upper.ok_or_else(|| bad("upper"))?)?;
        CubicalGrid::new(bounds, counts.ok_or_else(|| bad("counts"))?, periodic.ok_or_else(|| bad("periodic"))?)
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn cell_count(&self) -> usize {
        self.total
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn bounds(&self) -> &StateBox {
        &self.bounds
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn is_periodic(&self, i: usize) -> bool {
        self.periodic[i]
    }

    pub fn period(&self, i: usize) -> f64 {
        self.bounds.width(i)
    }

    pub fn cells(&self) -> impl Iterator<Item = CellId> {
        (0..self.total).map(CellId)
    }

    pub fn multi_index(&self, cell: CellId) -> Vec<usize> {
        let mut rest = cell.0;
        self.counts
            .iter()
            .map(|&n| {
                let k = rest % n;
                rest /= n;
                k
            })
            .collect()
    }

    pub fn cell_at(&self, multi: &[usize]) -> CellId {
        let mut id = 0;
        for i in (0..self.dim()).rev() {
            debug_assert!(multi[i] < self.counts[i]);
            id = id * self.counts[i] + multi[i];
        }
        CellId(id)
    }

    /// Coordinate of face `k` (0..=n) along dimension `i`. For `k > n` on a
    /// periodic dimension this extends the lattice onto the covering line.
    fn face(&self, i: usize, k: i64) -> f64 {
        self.bounds.lower[i] + k as f64 * self.widths[i]
    }

    /// Maps periodic coordinates into `[lower, upper)`; other coordinates
    /// are returned unchanged.
    pub fn wrap(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| if self.periodic[i] { self.wrap_coord(i, v) } else { v })
            .collect()
    }

    pub fn wrap_coord(&self, i: usize, v: f64) -> f64 {
        let lo = self.bounds.lower[i];
        let period = self.period(i);
        let w = lo + (v - lo).rem_euclid(period);
        if w >= self.bounds.upper[i] {
            lo
        } else {
            w
        }
    }

    /// Index along dimension `i` of the cell containing `v`, with ties on a
    /// shared face going to the lower index. `v` must already lie in bounds.
    fn locate_coord(&self, i: usize, v: f64) -> usize {
        let n = self.counts[i];
        let guess = ((v - self.bounds.lower[i]) / self.widths[i]).floor();
        let mut k = if guess.is_nan() || guess < 0.0 {
            0
        } else {
            (guess as usize).min(n - 1)
        };
        while k > 0 && v <= self.face(i, k as i64) {
            k -= 1;
        }
        while k + 1 < n && v > self.face(i, k as i64 + 1) {
            k += 1;
        }
        k
    }

    /// Cell containing `x`, or `None` when a non-periodic coordinate is
    /// outside the bounds. Periodic coordinates are wrapped first.
    pub fn locate(&self, x: &[f64]) -> Result<Option<CellId>> {
        check_dim(self.dim(), x.len())?;
        let mut multi = Vec::with_capacity(self.dim());
        for (i, &v) in x.iter().enumerate() {
            if !v.is_finite() {
                return Ok(None);
            }
            let v = if self.periodic[i] {
                self.wrap_coord(i, v)
            } else {
                if v < self.bounds.lower[i] || v > self.bounds.upper[i] {
                    return Ok(None);
                }
                v
            };
            multi.push(self.locate_coord(i, v));
        }
        Ok(Some(self.cell_at(&multi)))
    }

    pub fn cell_box(&self, cell: CellId) -> StateBox {
        let multi = self.multi_index(cell);
        StateBox {
            lower: (0..self.dim()).map(|i| self.face(i, multi[i] as i64)).collect(),
            upper: (0..self.dim()).map(|i| self.face(i, multi[i] as i64 + 1)).collect(),
        }
    }

    pub fn center(&self, cell: CellId) -> Vec<f64> {
        let multi = self.multi_index(cell);
        (0..self.dim())
            .map(|i| self.bounds.lower[i] + (multi[i] as f64 + 0.5) * self.widths[i])
            .collect()
    }

    /// The `2^M` corners of a cell. Bit `i` of the position in the returned
    /// vector selects the upper face along dimension `i`.
    pub fn corners(&self, cell: CellId) -> Vec<Vec<f64>> {
        let multi = self.multi_index(cell);
        let dim = self.dim();
        (0..1usize << dim)
            .map(|mask| {
                (0..dim)
                    .map(|i| self.face(i, (multi[i] + ((mask >> i) & 1)) as i64))
                    .collect()
            })
            .collect()
    }

    /// Number of corners per dimension in the deduplicated corner lattice.
    /// Periodic dimensions identify the last face with the first.
    fn corner_radix(&self, i: usize) -> usize {
        if self.periodic[i] {
            self.counts[i]
        } else {
            self.counts[i] + 1
        }
    }

    /// Size of the deduplicated corner set of the whole grid.
    pub fn corner_count(&self) -> usize {
        (0..self.dim()).map(|i| self.corner_radix(i)).product()
    }

    /// Coordinates of lattice corner `id` (dimension 0 fastest).
    pub fn corner_point(&self, id: usize) -> Vec<f64> {
        let mut rest = id;
        (0..self.dim())
            .map(|i| {
                let r = self.corner_radix(i);
                let k = rest % r;
                rest /= r;
                self.face(i, k as i64)
            })
            .collect()
    }

    /// Lattice ids of the corners of `cell`, in the same order as
    /// [`CubicalGrid::corners`].
    pub fn corner_ids(&self, cell: CellId) -> Vec<usize> {
        let multi = self.multi_index(cell);
        let dim = self.dim();
        (0..1usize << dim)
            .map(|mask| {
                let mut id = 0;
                for i in (0..dim).rev() {
                    let r = self.corner_radix(i);
                    let k = (multi[i] + ((mask >> i) & 1)) % r;
                    id = id * r + k;
                }
                id
            })
            .collect()
    }

    /// Cells touching `cell` through a face, edge or vertex (periodic
    /// dimensions wrap). Sorted, excludes `cell` itself.
    pub fn neighbors(&self, cell: CellId) -> Vec<CellId> {
        let multi = self.multi_index(cell);
        let dim = self.dim();
        let mut out = Vec::new();
        let mut offset = vec![-1i64; dim];
        loop {
            if offset.iter().any(|&o| o != 0) {
                let mut target = Vec::with_capacity(dim);
                let mut ok = true;
                for i in 0..dim {
                    let n = self.counts[i] as i64;
                    let k = multi[i] as i64 + offset[i];
                    if self.periodic[i] {
                        target.push(k.rem_euclid(n) as usize);
                    } else if (0..n).contains(&k) {
                        target.push(k as usize);
                    } else {
                        ok = false;
                        break;
                    }
                }
                if ok {
                    let id = self.cell_at(&target);
                    if id != cell {
                        out.push(id);
                    }
                }
            }
            let mut i = 0;
            while i < dim {
                offset[i] += 1;
                if offset[i] <= 1 {
                    break;
                }
                offset[i] = -1;
                i += 1;
            }
            if i == dim {
                break;
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Index ranges of cells overlapping `[a, b]` along dimension `i`.
    ///
    /// A positive-width extent must overlap a cell with positive length; a
    /// degenerate extent (`a == b`) uses closed containment, so a point on a
    /// shared face hits both cells.
    fn axis_hits(&self, i: usize, a: f64, b: f64, clipped: &mut bool) -> Vec<usize> {
        let n = self.counts[i];
        let lo = self.bounds.lower[i];
        let hi = self.bounds.upper[i];
        let degenerate = a == b;
        if self.periodic[i] {
            let period = self.period(i);
            if b - a >= period {
                return (0..n).collect();
            }
            let shift = ((a - lo) / period).floor() * period;
            let (mut a, mut b) = (a - shift, b - shift);
            if a < lo {
                a += period;
                b += period;
            }
            let (kmin, kmax) = self.axis_range(i, a, b, degenerate, -1, 2 * n as i64 + 1);
            if kmax < kmin {
                return Vec::new();
            }
            if kmax - kmin + 1 >= n as i64 {
                return (0..n).collect();
            }
            let mut ks: Vec<usize> = (kmin..=kmax).map(|k| k.rem_euclid(n as i64) as usize).collect();
            ks.sort_unstable();
            ks.dedup();
            ks
        } else {
            if a < lo || b > hi {
                *clipped = true;
            }
            let (a, b) = (a.max(lo), b.min(hi));
            if a > b || (!degenerate && a == b) {
                return Vec::new();
            }
            let (kmin, kmax) = self.axis_range(i, a, b, degenerate, 0, n as i64);
            (kmin.max(0)..=kmax.min(n as i64 - 1)).map(|k| k as usize).collect()
        }
    }

    /// First and last lattice cell index in `first..limit` overlapping `[a, b]`.
    fn axis_range(&self, i: usize, a: f64, b: f64, closed: bool, first: i64, limit: i64) -> (i64, i64) {
        let w = self.widths[i];
        let lo = self.bounds.lower[i];
        let clamp = |g: f64| -> i64 {
            if g.is_nan() {
                0
            } else {
                (g.max(first as f64) as i64).min(limit - 1)
            }
        };
        // cell k overlaps iff face(k) <= b and face(k+1) >= a (closed), or
        // face(k) < b and face(k+1) > a (positive overlap).
        let below_b = |k: i64| if closed { self.face(i, k) <= b } else { self.face(i, k) < b };
        let above_a = |k: i64| {
            if closed {
                self.face(i, k + 1) >= a
            } else {
                self.face(i, k + 1) > a
            }
        };
        let mut kmin = clamp(((a - lo) / w).floor());
        while kmin > first && above_a(kmin - 1) {
            kmin -= 1;
        }
        while kmin < limit - 1 && !above_a(kmin) {
            kmin += 1;
        }
        let mut kmax = clamp(((b - lo) / w).floor());
        while kmax < limit - 1 && below_b(kmax + 1) {
            kmax += 1;
        }
        while kmax > first && !below_b(kmax) {
            kmax -= 1;
        }
        if !above_a(kmin) || !below_b(kmax) {
            return (1, 0);
        }
        (kmin, kmax)
    }

    /// All cells overlapping `query`. Periodic dimensions wrap; the parts
    /// of `query` outside non-periodic bounds are dropped and reported via
    /// [`Intersection::clipped`].
    pub fn cells_intersecting(&self, query: &StateBox) -> Result<Intersection> {
        check_dim(self.dim(), query.dim())?;
        let mut clipped = false;
        let mut per_axis = Vec::with_capacity(self.dim());
        for i in 0..self.dim() {
            let hits = self.axis_hits(i, query.lower[i], query.upper[i], &mut clipped);
            if hits.is_empty() {
                return Ok(Intersection {
                    cells: Vec::new(),
                    clipped,
                });
            }
            per_axis.push(hits);
        }
        let mut cells = Vec::with_capacity(per_axis.iter().map(Vec::len).product());
        let mut pos = vec![0usize; self.dim()];
        let mut multi: Vec<usize> = per_axis.iter().map(|h| h[0]).collect();
        loop {
            cells.push(self.cell_at(&multi));
            let mut i = 0;
            while i < self.dim() {
                pos[i] += 1;
                if pos[i] < per_axis[i].len() {
                    multi[i] = per_axis[i][pos[i]];
                    break;
                }
                pos[i] = 0;
                multi[i] = per_axis[i][0];
                i += 1;
            }
            if i == self.dim() {
                break;
            }
        }
        cells.sort_unstable();
        Ok(Intersection { cells, clipped })
    }

    /// Brute-force counterpart of [`CubicalGrid::cells_intersecting`] that
    /// tests every cell box directly. Quadratic, intended for checks.
    pub fn cells_intersecting_naive(&self, query: &StateBox) -> Vec<CellId> {
        self.cells()
            .filter(|&c| {
                let multi = self.multi_index(c);
                (0..self.dim()).all(|i| {
                    let (a, b) = (query.lower[i], query.upper[i]);
                    let overlap = |k: i64| {
                        let (lo, hi) = (self.face(i, k), self.face(i, k + 1));
                        if a == b {
                            lo <= a && a <= hi
                        } else {
                            lo < b && hi > a
                        }
                    };
                    if self.periodic[i] {
                        let p = self.period(i);
                        if b - a >= p {
                            return true;
                        }
                        let n = self.counts[i] as i64;
                        (-3..=3).any(|m| overlap(multi[i] as i64 + m * n))
                    } else {
                        overlap(multi[i] as i64)
                    }
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn unit_grid(counts: Vec<usize>) -> CubicalGrid {
        let dim = counts.len();
        CubicalGrid::new(
            StateBox::new(vec![0.0; dim], vec![1.0; dim]).unwrap(),
            counts,
            vec![false; dim],
        )
        .unwrap()
    }

    fn fig2_grid() -> CubicalGrid {
        CubicalGrid::new(StateBox::new(vec![-3.0], vec![3.0]).unwrap(), vec![5], vec![false]).unwrap()
    }

    #[test]
    fn rejects_bad_boxes_and_grids() {
        assert!(StateBox::new(vec![1.0], vec![0.0]).is_err());
        assert!(StateBox::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(StateBox::new(vec![], vec![]).is_err());
        let flat = StateBox::new(vec![0.0], vec![0.0]).unwrap();
        assert!(CubicalGrid::new(flat, vec![1], vec![false]).is_err());
        let b = StateBox::new(vec![0.0], vec![1.0]).unwrap();
        assert!(CubicalGrid::new(b.clone(), vec![0], vec![false]).is_err());
        assert!(CubicalGrid::new(b, vec![2, 2], vec![false]).is_err());
    }

    #[test]
    fn dyadic_counts() {
        let g = CubicalGrid::dyadic(
            StateBox::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap(),
            &[3, 0],
            vec![false, false],
        )
        .unwrap();
        assert_eq!(g.counts(), &[8, 1]);
        assert_eq!(g.cell_count(), 8);
    }

    #[test]
    fn fig2_cells_and_locate() {
        let g = fig2_grid();
        assert_eq!(g.locate(&[-2.0]).unwrap(), Some(CellId(0)));
        assert_eq!(g.locate(&[-3.0]).unwrap(), Some(CellId(0)));
        assert_eq!(g.locate(&[0.0]).unwrap(), Some(CellId(2)));
        assert_eq!(g.locate(&[3.0]).unwrap(), Some(CellId(4)));
        assert_eq!(g.locate(&[3.5]).unwrap(), None);
        // shared face between a and b goes to a
        let face = g.cell_box(CellId(1)).lower()[0];
        assert_eq!(g.locate(&[face]).unwrap(), Some(CellId(0)));
        assert!(g.locate(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn periodic_locate_wraps() {
        let g = CubicalGrid::new(
            StateBox::new(vec![-PI, -1.0], vec![PI, 1.0]).unwrap(),
            vec![16, 4],
            vec![true, false],
        )
        .unwrap();
        let a = g.locate(&[PI + 0.1, 0.3]).unwrap();
        let b = g.locate(&[-PI + 0.1, 0.3]).unwrap();
        assert_eq!(a, b);
        assert!(a.is_some());
        assert_eq!(g.locate(&[-PI, -1.0]).unwrap(), Some(CellId(0)));
        assert_eq!(g.locate(&[0.0, 1.5]).unwrap(), None);
        assert_eq!(g.locate(&[5.0 * PI, 0.0]).unwrap(), g.locate(&[PI, 0.0]).unwrap());
    }

    #[test]
    fn corners_and_centers() {
        let g = unit_grid(vec![1]);
        assert_eq!(g.corners(CellId(0)), vec![vec![0.0], vec![1.0]]);
        assert_eq!(g.center(CellId(0)), vec![0.5]);
        let g2 = unit_grid(vec![1, 1]);
        let c = g2.corners(CellId(0));
        assert_eq!(c.len(), 4);
        assert_eq!(c, vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(g2.center(CellId(0)), vec![0.5, 0.5]);
    }

    #[test]
    fn shared_corners_are_bit_identical() {
        let g = CubicalGrid::dyadic(
            StateBox::new(vec![-1.3, 0.7], vec![2.9, 5.1]).unwrap(),
            &[3, 3],
            vec![false, false],
        )
        .unwrap();
        // every lattice corner must be produced identically by each cell that owns it
        let mut seen: std::collections::HashMap<usize, Vec<u64>> = Default::default();
        for c in g.cells() {
            for (pt, id) in g.corners(c).iter().zip(g.corner_ids(c)) {
                let bits: Vec<u64> = pt.iter().map(|v| v.to_bits()).collect();
                let prev = seen.entry(id).or_insert_with(|| bits.clone());
                assert_eq!(*prev, bits, "corner {id} differs between cells");
                let lattice: Vec<u64> = g.corner_point(id).iter().map(|v| v.to_bits()).collect();
                assert_eq!(lattice, bits);
            }
        }
        assert_eq!(seen.len(), 81);
        assert_eq!(g.corner_count(), 81);
    }

    #[test]
    fn header_round_trip() {
        let g = CubicalGrid::new(
            StateBox::new(vec![-PI, -2.0 * PI], vec![PI, 0.1]).unwrap(),
            vec![64, 5],
            vec![true, false],
        )
        .unwrap();
        assert_eq!(CubicalGrid::from_header(&g.header()).unwrap(), g);
        assert!(CubicalGrid::from_header("lower=0 upper=1 counts=x periodic=0").is_err());
    }

    #[test]
    fn corner_count_periodic() {
        let g = CubicalGrid::dyadic(
            StateBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
            &[2, 3],
            vec![true, false],
        )
        .unwrap();
        assert_eq!(g.corner_count(), 4 * 9);
        let ids: std::collections::BTreeSet<usize> = g.cells().flat_map(|c| g.corner_ids(c)).collect();
        assert_eq!(ids.len(), 36);
        let full = CubicalGrid::dyadic(
            StateBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
            &[2, 3],
            vec![true, true],
        )
        .unwrap();
        assert_eq!(full.corner_count(), 32);
    }

    #[test]
    fn centers_lie_in_their_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let dim = rng.gen_range(1..=3);
            let lower: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let upper: Vec<f64> = lower.iter().map(|l| l + rng.gen_range(0.1..4.0)).collect();
            let counts: Vec<usize> = (0..dim).map(|_| rng.gen_range(1..9)).collect();
            let periodic: Vec<bool> = (0..dim).map(|_| rng.gen_bool(0.3)).collect();
            let g = CubicalGrid::new(StateBox::new(lower, upper).unwrap(), counts, periodic).unwrap();
            for c in g.cells() {
                let x = g.center(c);
                assert!(g.cell_box(c).contains(&x));
                assert_eq!(g.locate(&x).unwrap(), Some(c));
            }
        }
    }

    #[test]
    fn locate_partition_property() {
        let g = CubicalGrid::new(
            StateBox::new(vec![-PI, -2.0 * PI], vec![PI, 2.0 * PI]).unwrap(),
            vec![64, 37],
            vec![true, false],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let x = vec![rng.gen_range(-3.0 * PI..3.0 * PI), rng.gen_range(-2.0 * PI..=2.0 * PI)];
            let c = g.locate(&x).unwrap().expect("in bounds");
            assert!(g.cell_box(c).contains(&g.wrap(&x)), "{x:?} not in {c}");
        }
    }

    #[test]
    fn intersect_single_and_all() {
        let g = unit_grid(vec![4, 4]);
        let inside = StateBox::new(vec![0.3, 0.55], vec![0.4, 0.6]).unwrap();
        let hit = g.cells_intersecting(&inside).unwrap();
        assert_eq!(hit.cells, vec![g.cell_at(&[1, 2])]);
        assert!(!hit.clipped);
        let all = g.cells_intersecting(g.bounds()).unwrap();
        assert_eq!(all.cells.len(), 16);
        assert!(!all.clipped);
        // a cell's own box only overlaps itself
        for c in g.cells() {
            assert_eq!(g.cells_intersecting(&g.cell_box(c)).unwrap().cells, vec![c]);
        }
    }

    #[test]
    fn intersect_clips_outside() {
        let g = unit_grid(vec![4]);
        let q = StateBox::new(vec![0.9], vec![1.4]).unwrap();
        let hit = g.cells_intersecting(&q).unwrap();
        assert_eq!(hit.cells, vec![CellId(3)]);
        assert!(hit.clipped);
        let away = StateBox::new(vec![2.0], vec![3.0]).unwrap();
        let hit = g.cells_intersecting(&away).unwrap();
        assert!(hit.cells.is_empty());
        assert!(hit.clipped);
    }

    #[test]
    fn point_on_face_hits_both_cells() {
        let g = unit_grid(vec![4]);
        let face = g.cell_box(CellId(2)).lower()[0];
        let hit = g.cells_intersecting(&StateBox::point(&[face]).unwrap()).unwrap();
        assert_eq!(hit.cells, vec![CellId(1), CellId(2)]);
    }

    #[test]
    fn intersect_wraps_periodic_seam() {
        let g = CubicalGrid::new(
            StateBox::new(vec![-PI], vec![PI]).unwrap(),
            vec![8],
            vec![true],
        )
        .unwrap();
        let q = StateBox::new(vec![PI - 0.2], vec![PI + 0.2]).unwrap();
        let hit = g.cells_intersecting(&q).unwrap();
        assert_eq!(hit.cells, vec![CellId(0), CellId(7)]);
        assert!(!hit.clipped);
        let wide = StateBox::new(vec![0.0], vec![7.0]).unwrap();
        assert_eq!(g.cells_intersecting(&wide).unwrap().cells.len(), 8);
    }

    #[test]
    fn neighbors_wrap_and_clip() {
        let g = CubicalGrid::new(
            StateBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap(),
            vec![4, 4],
            vec![true, false],
        )
        .unwrap();
        let corner = g.cell_at(&[0, 0]);
        let n = g.neighbors(corner);
        assert_eq!(n.len(), 5);
        assert!(n.contains(&g.cell_at(&[3, 0])));
        assert!(n.contains(&g.cell_at(&[3, 1])));
        assert_eq!(g.neighbors(g.cell_at(&[1, 1])).len(), 8);
    }

    fn arb_grid_and_box() -> impl Strategy<Value = (CubicalGrid, StateBox)> {
        (
            prop::collection::vec((1usize..7, any::<bool>()), 1..=3),
            prop::collection::vec((-1.5f64..1.5, 0.0f64..1.2, any::<bool>()), 3),
        )
            .prop_map(|(axes, q)| {
                let dim = axes.len();
                let grid = CubicalGrid::new(
                    StateBox::new(vec![-1.0; dim], vec![0.5; dim]).unwrap(),
                    axes.iter().map(|a| a.0).collect(),
                    axes.iter().map(|a| a.1).collect(),
                )
                .unwrap();
                let lower: Vec<f64> = q[..dim].iter().map(|t| t.0).collect();
                let upper: Vec<f64> = q[..dim]
                    .iter()
                    .map(|t| if t.2 { t.0 } else { t.0 + t.1 })
                    .collect();
                (grid, StateBox::new(lower, upper).unwrap())
            })
    }

    proptest! {
        #[test]
        fn intersect_matches_brute_force((grid, query) in arb_grid_and_box()) {
            let fast = grid.cells_intersecting(&query).unwrap().cells;
            let slow = grid.cells_intersecting_naive(&query);
            prop_assert_eq!(fast, slow);
        }

        #[test]
        fn intersect_on_face_aligned_boxes(
            k0 in 0usize..16, len in 0usize..6, j0 in 0usize..16, jlen in 0usize..6
        ) {
            // boxes whose faces coincide with grid faces stress the tie rules
            let g = CubicalGrid::new(
                StateBox::new(vec![-PI, -2.0], vec![PI, 2.0]).unwrap(),
                vec![16, 16],
                vec![true, false],
            ).unwrap();
            let f = |i: usize, k: usize| g.bounds().lower()[i] + k as f64 * g.widths()[i];
            let q = StateBox::new(vec![f(0, k0), f(1, j0)], vec![f(0, k0 + len), f(1, j0 + jlen)]).unwrap();
            prop_assert_eq!(g.cells_intersecting(&q).unwrap().cells, g.cells_intersecting_naive(&q));
        }
    }

    #[test]
    fn intersect_random_boxes_16x16() {
        let g = unit_grid(vec![16, 16]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let a: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.2..1.1)).collect();
            let b: Vec<f64> = a.iter().map(|v| v + rng.gen_range(0.0..0.4)).collect();
            let q = StateBox::new(a, b).unwrap();
            assert_eq!(g.cells_intersecting(&q).unwrap().cells, g.cells_intersecting_naive(&q));
        }
    }
}
