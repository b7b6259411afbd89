//! Condensation, Morse graph and regions of attraction of a
//! [`MultivaluedMap`].
//!
//! A Morse node is a strongly connected component with at least one internal
//! edge. Attractors are Morse nodes that reach no other Morse node and no
//! escaped cell. A cell belongs to the region of attraction of attractor `A`
//! when `A` is the only attractor it can reach and it cannot reach an
//! escaped cell or a cell without successors; cells with several reachable
//! attractors, or a path out of the domain, are uncertain.

use std::fmt::Write as _;
use std::path::Path;

use fixedbitset::FixedBitSet;

use crate::error::{Error, Result};
use crate::grid::{CellId, CubicalGrid, StateBox};
use crate::mvmap::MultivaluedMap;

/// Strongly connected components of a map and the DAG between them.
#[derive(Clone, Debug)]
pub struct Condensation {
    component: Vec<usize>,
    members: Vec<Vec<CellId>>,
    edges: Vec<Vec<usize>>,
    recurrent: Vec<bool>,
}

impl Condensation {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Component of each cell.
    pub fn component(&self, cell: CellId) -> usize {
        self.component[cell.0]
    }

    /// Cells of component `k`, ascending.
    pub fn members(&self, k: usize) -> &[CellId] {
        &self.members[k]
    }

    /// Successor components of `k`, sorted; never contains `k`.
    pub fn successors(&self, k: usize) -> &[usize] {
        &self.edges[k]
    }

    /// Whether component `k` contains an edge (a self-loop counts).
    pub fn is_recurrent(&self, k: usize) -> bool {
        self.recurrent[k]
    }

    /// Components in topological order: every edge goes from an earlier to
    /// a later entry. Components are numbered so that this is `0..len`.
    pub fn topological_order(&self) -> impl Iterator<Item = usize> {
        0..self.len()
    }
}

/// Tarjan's algorithm with an explicit stack. Components come out sinks
/// first; they are renumbered so edges point from lower to higher index.
pub fn condense(map: &MultivaluedMap) -> Condensation {
    let n = map.cell_count();
    const UNSEEN: usize = usize::MAX;
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut found: Vec<Vec<CellId>> = Vec::new();
    let mut next = 0;
    // (cell, position in its successor list)
    let mut call: Vec<(usize, usize)> = Vec::new();
    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        call.push((root, 0));
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            let succ = map.successors(CellId(v));
            if *pos < succ.len() {
                let w = succ[*pos].0;
                *pos += 1;
                if index[w] == UNSEEN {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack");
                    on_stack[w] = false;
                    comp.push(CellId(w));
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                found.push(comp);
            }
        }
    }
    found.reverse();
    let mut component = vec![0; n];
    for (k, comp) in found.iter().enumerate() {
        for c in comp {
            component[c.0] = k;
        }
    }
    let mut edges = vec![Vec::new(); found.len()];
    let mut recurrent = vec![false; found.len()];
    for (k, comp) in found.iter().enumerate() {
        for &c in comp {
            for s in map.successors(c) {
                let t = component[s.0];
                if t == k {
                    recurrent[k] = true;
                } else {
                    edges[k].push(t);
                }
            }
        }
        edges[k].sort_unstable();
        edges[k].dedup();
    }
    Condensation {
        component,
        members: found,
        edges,
        recurrent,
    }
}

/// Region-of-attraction label of a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RoaLabel {
    /// Index of the unique attractor node reachable from the cell.
    Attractor(usize),
    Uncertain,
    Escaped,
}

impl RoaLabel {
    /// Raster code: the node index, `-1` uncertain, `-2` escaped.
    pub fn code(self) -> i64 {
        match self {
            RoaLabel::Attractor(i) => i as i64,
            RoaLabel::Uncertain => -1,
            RoaLabel::Escaped => -2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MorseNode {
    pub cells: Vec<CellId>,
    pub attractor: bool,
}

/// Morse nodes (ordered by their smallest cell), transitively reduced
/// edges, full reachability, and the per-cell region of attraction.
#[derive(Clone, Debug)]
pub struct MorseGraphResult {
    grid: CubicalGrid,
    nodes: Vec<MorseNode>,
    edges: Vec<(usize, usize)>,
    reach: Vec<FixedBitSet>,
    roa: Vec<RoaLabel>,
}

pub fn morse_graph(map: &MultivaluedMap) -> MorseGraphResult {
    let cg = condense(map);
    let k = cg.len();
    // Morse node numbering by smallest member cell
    let mut morse: Vec<usize> = (0..k).filter(|&s| cg.is_recurrent(s)).collect();
    morse.sort_by_key(|&s| cg.members(s)[0]);
    let p = morse.len();
    let mut node_of = vec![usize::MAX; k];
    for (i, &s) in morse.iter().enumerate() {
        node_of[s] = i;
    }
    // reverse topological sweep: Morse nodes reachable from each component
    // (itself included) and whether an escaped cell is reachable
    let mut below = vec![FixedBitSet::with_capacity(p); k];
    let mut leaks = vec![false; k];
    for s in (0..k).rev() {
        let mut acc = FixedBitSet::with_capacity(p);
        // a cell with no image at all is as uninformative as an escape
        let mut leak = cg.members(s).iter().any(|&c| map.is_escaped(c) || map.successors(c).is_empty());
        for &t in cg.successors(s) {
            acc.union_with(&below[t]);
            leak |= leaks[t];
        }
        if node_of[s] != usize::MAX {
            acc.insert(node_of[s]);
        }
        below[s] = acc;
        leaks[s] = leak;
    }
    // strict reachability between Morse nodes
    let reach: Vec<FixedBitSet> = morse
        .iter()
        .map(|&s| {
            let mut r = FixedBitSet::with_capacity(p);
            for &t in cg.successors(s) {
                r.union_with(&below[t]);
            }
            r
        })
        .collect();
    let attractor: Vec<bool> = (0..p).map(|i| reach[i].is_clear() && !leaks[morse[i]]).collect();
    let mut edges = Vec::new();
    for i in 0..p {
        let mut indirect = FixedBitSet::with_capacity(p);
        for j in reach[i].ones() {
            indirect.union_with(&reach[j]);
        }
        edges.extend(reach[i].difference(&indirect).map(|j| (i, j)));
    }
    let mut attractors = FixedBitSet::with_capacity(p);
    for (i, &a) in attractor.iter().enumerate() {
        attractors.set(i, a);
    }
    let component_label: Vec<RoaLabel> = (0..k)
        .map(|s| {
            let mut hit = below[s].intersection(&attractors);
            match (hit.next(), hit.next(), leaks[s]) {
                (Some(a), None, false) => RoaLabel::Attractor(a),
                _ => RoaLabel::Uncertain,
            }
        })
        .collect();
    let roa = (0..map.cell_count())
        .map(|c| {
            if map.is_escaped(CellId(c)) {
                RoaLabel::Escaped
            } else {
                component_label[cg.component(CellId(c))]
            }
        })
        .collect();
    let nodes = morse
        .iter()
        .zip(&attractor)
        .map(|(&s, &a)| MorseNode {
            cells: cg.members(s).to_vec(),
            attractor: a,
        })
        .collect();
    MorseGraphResult {
        grid: map.grid().clone(),
        nodes,
        edges,
        reach,
        roa,
    }
}

/// Attractors touching a goal box and the union of their regions.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalRoa {
    /// Empty when no attractor meets the goal.
    pub nodes: Vec<usize>,
    pub cells: Vec<CellId>,
}

impl MorseGraphResult {
    pub fn grid(&self) -> &CubicalGrid {
        &self.grid
    }

    pub fn nodes(&self) -> &[MorseNode] {
        &self.nodes
    }

    /// Transitively reduced edges `(from, to)`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Whether node `j` is reachable from node `i` by a nonempty path.
    pub fn reachable(&self, i: usize, j: usize) -> bool {
        self.reach[i].contains(j)
    }

    pub fn attractors(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].attractor).collect()
    }

    pub fn roa(&self) -> &[RoaLabel] {
        &self.roa
    }

    pub fn label(&self, cell: CellId) -> RoaLabel {
        self.roa[cell.0]
    }

    pub fn roa_cells(&self, node: usize) -> Vec<CellId> {
        (0..self.roa.len())
            .filter(|&c| self.roa[c] == RoaLabel::Attractor(node))
            .map(CellId)
            .collect()
    }

    /// Selects the attractors with a cell meeting `goal`. Fails only when
    /// the goal misses the domain altogether.
    pub fn roa_for_goal(&self, goal: &StateBox) -> Result<GoalRoa> {
        let hit = self.grid.cells_intersecting(goal)?;
        if hit.cells.is_empty() {
            return Err(Error::Goal("goal region lies outside the grid".into()));
        }
        let touched: Vec<usize> = self
            .attractors()
            .into_iter()
            .filter(|&i| self.nodes[i].cells.iter().any(|c| hit.cells.binary_search(c).is_ok()))
            .collect();
        let cells = (0..self.roa.len())
            .filter(|&c| matches!(self.roa[c], RoaLabel::Attractor(a) if touched.contains(&a)))
            .map(CellId)
            .collect();
        Ok(GoalRoa { nodes: touched, cells })
    }

    /// Graphviz description; attractors are drawn as double circles.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph morse {\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let shape = if n.attractor { "doublecircle" } else { "circle" };
            writeln!(
                s,
                "  n{i} [label=\"{i}\\n{} cells\", shape={shape}, attractor={}];",
                n.cells.len(),
                n.attractor
            )
            .unwrap();
        }
        for (a, b) in &self.edges {
            writeln!(s, "  n{a} -> n{b};").unwrap();
        }
        s.push_str("}\n");
        s
    }

    /// Dense label raster: header lines, then one line per combination of
    /// the higher indices holding the labels along dimension 0.
    pub fn raster_text(&self) -> String {
        let codes: Vec<i64> = self.roa.iter().map(|l| l.code()).collect();
        raster_to_text(&self.grid, &codes, "roa")
    }

    pub fn write_dot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_dot()).map_err(|e| Error::io(path, e))
    }

    pub fn write_raster(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.raster_text()).map_err(|e| Error::io(path, e))
    }
}

/// Label raster in the text layout shared with ground-truth files. Codes
/// are node indices, `-1` uncertain and `-2` escaped.
pub fn raster_to_text(grid: &CubicalGrid, codes: &[i64], kind: &str) -> String {
    let mut s = format!("# gpmorse-raster kind={kind}\n# grid {}\n", grid.header());
    s.push_str("# codes: n >= 0 region of node n, -1 uncertain, -2 escaped; dimension 0 along each line\n");
    for row in codes.chunks(grid.counts()[0]) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

/// Parses [`raster_to_text`] output back into its grid and codes.
pub fn raster_from_text(text: &str, origin: &Path) -> Result<(CubicalGrid, String, Vec<i64>)> {
    let err = |line: usize, msg: String| Error::parse(origin, line, msg);
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let kind = lines
        .next()
        .and_then(|(_, l)| l.strip_prefix("# gpmorse-raster kind="))
        .ok_or_else(|| err(1, "missing '# gpmorse-raster' header".into()))?
        .to_string();
    let grid = lines
        .next()
        .and_then(|(_, l)| l.strip_prefix("# grid"))
        .ok_or_else(|| err(2, "missing '# grid' line".into()))
        .and_then(|g| CubicalGrid::from_header(g).map_err(|e| err(2, e.to_string())))?;
    let mut codes = Vec::with_capacity(grid.cell_count());
    for (ln, l) in lines {
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        for t in l.split_whitespace() {
            codes.push(t.parse::<i64>().map_err(|_| err(ln, format!("bad label '{t}'")))?);
        }
    }
    if codes.len() != grid.cell_count() {
        return Err(err(0, format!("expected {} labels, found {}", grid.cell_count(), codes.len())));
    }
    Ok((grid, kind, codes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mvmap::MapMode;

    fn line_grid(n: usize) -> CubicalGrid {
        CubicalGrid::new(StateBox::new(vec![0.0], vec![n as f64]).unwrap(), vec![n], vec![false]).unwrap()
    }

    fn map(adj: &[&[usize]], escaped: &[usize]) -> MultivaluedMap {
        let n = adj.len();
        let mut esc = vec![false; n];
        for &e in escaped {
            esc[e] = true;
        }
        MultivaluedMap::from_adjacency(
            line_grid(n),
            MapMode::GpConfidence { delta: 0.5 },
            adj.iter().map(|s| s.iter().map(|&c| CellId(c)).collect()).collect(),
            esc,
        )
        .unwrap()
    }

    #[test]
    fn fig2_graph() {
        // a..e = 0..4
        let m = map(&[&[1], &[1, 2], &[2], &[2, 3], &[3]], &[]);
        let cg = condense(&m);
        assert_eq!(cg.len(), 5);
        for k in 0..5 {
            for &t in cg.successors(k) {
                assert!(t > k);
            }
        }
        let r = morse_graph(&m);
        let cells: Vec<Vec<CellId>> = r.nodes().iter().map(|n| n.cells.clone()).collect();
        assert_eq!(cells, vec![vec![CellId(1)], vec![CellId(2)], vec![CellId(3)]]);
        assert_eq!(r.edges(), &[(0, 1), (2, 1)]);
        assert_eq!(r.attractors(), vec![1]);
        assert!(r.roa().iter().all(|&l| l == RoaLabel::Attractor(1)));
    }

    #[test]
    fn empty_map_has_no_nodes() {
        let m = map(&[&[], &[], &[]], &[]);
        assert_eq!(condense(&m).len(), 3);
        let r = morse_graph(&m);
        assert!(r.nodes().is_empty());
        assert!(r.roa().iter().all(|&l| l == RoaLabel::Uncertain));
    }

    #[test]
    fn two_sinks_and_a_split_cell() {
        // 0 -> 1 (sink), 3 -> 4 (sink), 2 -> {1, 4}
        let m = map(&[&[1], &[1], &[1, 4], &[4], &[4]], &[]);
        let r = morse_graph(&m);
        assert_eq!(r.attractors(), vec![0, 1]);
        let labels: Vec<i64> = r.roa().iter().map(|l| l.code()).collect();
        assert_eq!(labels, vec![0, 0, -1, 1, 1]);
    }

    #[test]
    fn leaking_cells_are_uncertain() {
        // 1 is a fixed point but may leave via 0
        let m = map(&[&[], &[0, 1], &[1], &[3]], &[0]);
        let r = morse_graph(&m);
        assert_eq!(r.nodes().len(), 2);
        assert!(!r.nodes()[0].attractor);
        assert!(r.nodes()[1].attractor);
        let labels: Vec<i64> = r.roa().iter().map(|l| l.code()).collect();
        assert_eq!(labels, vec![-2, -1, -1, 1]);
    }

    #[test]
    fn cycle_is_one_node() {
        let m = map(&[&[1], &[2], &[0], &[0]], &[]);
        let r = morse_graph(&m);
        assert_eq!(r.nodes().len(), 1);
        assert_eq!(r.nodes()[0].cells.len(), 3);
        assert_eq!(r.roa_cells(0).len(), 4);
    }

    #[test]
    fn long_chain_does_not_overflow_the_stack() {
        let n = 200_000;
        let adj: Vec<Vec<CellId>> = (0..n).map(|i| vec![CellId((i + 1).min(n - 1))]).collect();
        let m = MultivaluedMap::from_adjacency(line_grid(n), MapMode::GpConfidence { delta: 0.5 }, adj, vec![false; n]).unwrap();
        let r = morse_graph(&m);
        assert_eq!(r.nodes().len(), 1);
        assert_eq!(r.roa_cells(0).len(), n);
    }

    #[test]
    fn goal_selection() {
        let m = map(&[&[1], &[1], &[1, 4], &[4], &[4]], &[]);
        let r = morse_graph(&m);
        let g = r.roa_for_goal(&StateBox::new(vec![4.2], vec![4.8]).unwrap()).unwrap();
        assert_eq!(g.nodes, vec![1]);
        assert_eq!(g.cells, vec![CellId(3), CellId(4)]);
        let all = r.roa_for_goal(&StateBox::new(vec![0.0], vec![5.0]).unwrap()).unwrap();
        assert_eq!(all.nodes, vec![0, 1]);
        let none = r.roa_for_goal(&StateBox::new(vec![2.2], vec![2.8]).unwrap()).unwrap();
        assert!(none.nodes.is_empty() && none.cells.is_empty());
        assert!(r.roa_for_goal(&StateBox::new(vec![7.0], vec![8.0]).unwrap()).is_err());
    }

    #[test]
    fn raster_round_trip() {
        let g = CubicalGrid::new(StateBox::new(vec![0.0; 2], vec![1.0; 2]).unwrap(), vec![3, 2], vec![false, true]).unwrap();
        let codes = vec![0, -1, 2, -2, 1, 1];
        let text = raster_to_text(&g, &codes, "truth");
        assert_eq!(text.lines().count(), 5);
        let (g2, kind, c2) = raster_from_text(&text, Path::new("r")).unwrap();
        assert_eq!((g2, kind.as_str(), c2), (g, "truth", codes));
    }

    #[test]
    fn dot_lists_nodes_and_edges() {
        let m = map(&[&[1], &[1, 2], &[2], &[2, 3], &[3]], &[]);
        let dot = morse_graph(&m).to_dot();
        assert!(dot.contains("n1 [label=\"1\\n1 cells\", shape=doublecircle"));
        assert!(dot.contains("n0 -> n1;") && dot.contains("n2 -> n1;"));
    }
}
