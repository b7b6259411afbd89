//! Independent reference implementations shared by the integration tests
//! and the acceptance harness.

#![allow(dead_code)]

use gpmorse::grid::{CellId, CubicalGrid, StateBox};
use gpmorse::mvmap::{MapMode, MultivaluedMap};
use rand::Rng;

/// Random map on at most `max_cells` cells of a line grid. Escaped cells
/// get no successors.
pub fn random_map(rng: &mut impl Rng, max_cells: usize) -> MultivaluedMap {
    let n = rng.gen_range(1..=max_cells);
    let p_edge = rng.gen_range(0.05..0.4);
    let p_esc = if rng.gen_bool(0.5) { 0.0 } else { 0.15 };
    let escaped: Vec<bool> = (0..n).map(|_| rng.gen_bool(p_esc)).collect();
    let adj = (0..n)
        .map(|i| {
            if escaped[i] {
                return Vec::new();
            }
            (0..n).filter(|_| rng.gen_bool(p_edge)).map(CellId).collect()
        })
        .collect();
    let grid = CubicalGrid::new(StateBox::new(vec![0.0], vec![n as f64]).unwrap(), vec![n], vec![false]).unwrap();
    MultivaluedMap::from_adjacency(grid, MapMode::GpConfidence { delta: 0.5 }, adj, escaped).unwrap()
}

/// Everything derived from the transitive closure alone.
#[derive(Debug, PartialEq)]
pub struct Brute {
    /// Component of each cell, numbered by smallest member.
    pub partition: Vec<usize>,
    /// Morse node cell sets, ordered by smallest member.
    pub nodes: Vec<Vec<usize>>,
    pub attractor: Vec<bool>,
    pub edges: Vec<(usize, usize)>,
    /// Node index, -1 uncertain, -2 escaped.
    pub roa: Vec<i64>,
}

pub fn brute_force(map: &MultivaluedMap) -> Brute {
    let n = map.cell_count();
    // r[i][j]: a path of length >= 1 from i to j
    let mut r = vec![vec![false; n]; n];
    for i in 0..n {
        for s in map.successors(CellId(i)) {
            r[i][s.0] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            if r[i][k] {
                for j in 0..n {
                    if r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
    }
    let reaches_or_is = |i: usize, j: usize| i == j || r[i][j];
    let mut partition = vec![usize::MAX; n];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        if partition[i] != usize::MAX {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|&j| i == j || (r[i][j] && r[j][i])).collect();
        for &j in &members {
            partition[j] = comps.len();
        }
        comps.push(members);
    }
    let has_edge = |c: &[usize]| c.iter().any(|&a| map.successors(CellId(a)).iter().any(|b| c.contains(&b.0)));
    let nodes: Vec<Vec<usize>> = comps.into_iter().filter(|c| has_edge(c)).collect();
    let p = nodes.len();
    let node_reach = |a: usize, b: usize| a != b && nodes[a].iter().any(|&x| nodes[b].iter().any(|&y| r[x][y]));
    let dead = |e: usize| map.is_escaped(CellId(e)) || map.successors(CellId(e)).is_empty();
    let leaks = |c: usize| (0..n).any(|e| dead(e) && reaches_or_is(c, e));
    let attractor: Vec<bool> = (0..p)
        .map(|a| (0..p).all(|b| !node_reach(a, b)) && !nodes[a].iter().any(|&c| leaks(c)))
        .collect();
    let mut edges = Vec::new();
    for a in 0..p {
        for b in 0..p {
            if node_reach(a, b) && !(0..p).any(|t| node_reach(a, t) && node_reach(t, b)) {
                edges.push((a, b));
            }
        }
    }
    let roa = (0..n)
        .map(|c| {
            if map.is_escaped(CellId(c)) {
                return -2;
            }
            let hit: Vec<usize> = (0..p)
                .filter(|&a| attractor[a] && nodes[a].iter().any(|&x| reaches_or_is(c, x)))
                .collect();
            if hit.len() == 1 && !leaks(c) {
                hit[0] as i64
            } else {
                -1
            }
        })
        .collect();
    Brute {
        partition,
        nodes,
        attractor,
        edges,
        roa,
    }
}

/// The same quantities from the library, numbered like [`brute_force`].
pub fn from_library(map: &MultivaluedMap) -> Brute {
    let n = map.cell_count();
    let cg = gpmorse::morse::condense(map);
    let mut first = vec![usize::MAX; cg.len()];
    for c in 0..n {
        let k = cg.component(CellId(c));
        first[k] = first[k].min(c);
    }
    let mut order: Vec<usize> = (0..cg.len()).collect();
    order.sort_by_key(|&k| first[k]);
    let mut rank = vec![0; cg.len()];
    for (i, &k) in order.iter().enumerate() {
        rank[k] = i;
    }
    let mg = gpmorse::morse::morse_graph(map);
    Brute {
        partition: (0..n).map(|c| rank[cg.component(CellId(c))]).collect(),
        nodes: mg.nodes().iter().map(|nd| nd.cells.iter().map(|c| c.0).collect()).collect(),
        attractor: mg.nodes().iter().map(|nd| nd.attractor).collect(),
        edges: mg.edges().to_vec(),
        roa: mg.roa().iter().map(|l| l.code()).collect(),
    }
}

/// Naive GP posterior mean and standard deviation from a fresh dense solve
/// of `(σ²(K + gI)) w = y`, kernel evaluated from its closed form.
pub fn naive_gp_predict(
    xs: &[Vec<f64>],
    targets: &[f64],
    lengthscales: &[f64],
    periods: &[Option<f64>],
    noise_ratio: f64,
    signal_variance: f64,
    matern52: bool,
    x: &[f64],
) -> (f64, f64) {
    use faer::Mat;
    let corr = |a: &[f64], b: &[f64]| {
        let mut r2 = 0.0;
        for i in 0..a.len() {
            let mut d = a[i] - b[i];
            if let Some(p) = periods[i] {
                d = p / std::f64::consts::PI * (std::f64::consts::PI * d.abs() / p).sin();
            }
            r2 += (d / lengthscales[i]).powi(2);
        }
        let r = r2.sqrt();
        if matern52 {
            let a = 5f64.sqrt() * r;
            (1.0 + a + a * a / 3.0) * (-a).exp()
        } else {
            let a = 3f64.sqrt() * r;
            (1.0 + a) * (-a).exp()
        }
    };
    let n = xs.len();
    let k = Mat::from_fn(n, n, |i, j| corr(&xs[i], &xs[j]) + if i == j { noise_ratio } else { 0.0 });
    let lu = k.partial_piv_lu();
    use faer::linalg::solvers::Solve;
    let y = Mat::from_fn(n, 1, |i, _| targets[i]);
    let w = lu.solve(&y);
    let ks = Mat::from_fn(n, 1, |i, _| corr(&xs[i], x));
    let v = lu.solve(&ks);
    let mean: f64 = (0..n).map(|i| ks[(i, 0)] * w[(i, 0)]).sum();
    let var: f64 = signal_variance * (1.0 - (0..n).map(|i| ks[(i, 0)] * v[(i, 0)]).sum::<f64>());
    (mean, var.max(0.0).sqrt())
}
