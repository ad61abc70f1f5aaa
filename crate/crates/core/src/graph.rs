//! Sparse undirected graphs in CSR layout, capped breadth-first search, and
//! the topology summaries that drive bandwidth selection.
//!
//! All distance work goes through repeated capped BFS; no dense distance
//! matrix is ever stored, so memory stays proportional to the edge count.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Immutable simple undirected graph on nodes `0..n`.
///
/// Neighbor lists are sorted, duplicate-free, symmetric and contain no
/// self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

/// Bookkeeping produced while normalizing a raw edge list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub self_loops_removed: usize,
    pub duplicates_removed: usize,
    /// Arcs whose reverse was absent from the input (only counted when the
    /// input was declared directed).
    pub unreciprocated_arcs: usize,
}

impl Graph {
    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Self {
        Graph { offsets: vec![0; n + 1], targets: Vec::new() }
    }

    /// Builds a simple undirected graph from an edge list.
    ///
    /// Self-loops and repeated pairs are dropped and counted. With
    /// `symmetrize` the input is read as directed arcs and the result is
    /// their symmetric closure; reciprocity is recorded in the report.
    /// Without it every pair is an undirected edge already.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], symmetrize: bool) -> Result<(Self, BuildReport)> {
        let mut report = BuildReport::default();
        let mut arcs: Vec<(usize, usize)> = Vec::with_capacity(edges.len() * 2);
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::input(format!("edge ({a},{b}) references a node >= n={n}")));
            }
            if a == b {
                report.self_loops_removed += 1;
                continue;
            }
            arcs.push((a, b));
            arcs.push((b, a));
        }
        let non_loop = edges.len() - report.self_loops_removed;
        arcs.sort_unstable();
        arcs.dedup();
        if symmetrize {
            let mut directed: Vec<(usize, usize)> =
                edges.iter().copied().filter(|(a, b)| a != b).collect();
            directed.sort_unstable();
            directed.dedup();
            report.duplicates_removed = non_loop - directed.len();
            report.unreciprocated_arcs =
                directed.iter().filter(|(a, b)| directed.binary_search(&(*b, *a)).is_err()).count();
        } else {
            report.duplicates_removed = non_loop - arcs.len() / 2;
        }
        Ok((Self::from_sorted_arcs(n, &arcs), report))
    }

    /// `arcs` must be sorted, deduplicated and symmetric.
    fn from_sorted_arcs(n: usize, arcs: &[(usize, usize)]) -> Self {
        let mut offsets = vec![0usize; n + 1];
        for &(a, _) in arcs {
            offsets[a + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let targets = arcs.iter().map(|&(_, b)| b).collect();
        Graph { offsets, targets }
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    pub fn avg_degree(&self) -> f64 {
        if self.n() == 0 {
            0.0
        } else {
            2.0 * self.edge_count() as f64 / self.n() as f64
        }
    }

    /// Undirected edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n()).flat_map(move |i| {
            self.neighbors(i).iter().copied().filter(move |&j| j > i).map(move |j| (i, j))
        })
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n());
        let mut arcs: Vec<(usize, usize)> = Vec::with_capacity(self.targets.len());
        for i in 0..self.n() {
            for &j in self.neighbors(i) {
                arcs.push((perm[i], perm[j]));
            }
        }
        arcs.sort_unstable();
        Self::from_sorted_arcs(self.n(), &arcs)
    }

    /// Shortest-path distances from `source` to every node within `cap`.
    ///
    /// The result contains exactly the nodes at distance `<= cap`,
    /// including `source` itself at distance 0.
    pub fn capped_bfs(&self, source: usize, cap: usize) -> BTreeMap<usize, usize> {
        let mut bfs = Bfs::new(self.n());
        let mut out = BTreeMap::new();
        bfs.run(self, source, cap, |j, d| {
            out.insert(j, d);
        });
        out
    }

    /// Node lists of the connected components, each sorted, ordered by
    /// their smallest node.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut comps = Vec::new();
        let mut stack = Vec::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            stack.push(s);
            let mut comp = Vec::new();
            while let Some(u) = stack.pop() {
                comp.push(u);
                for &v in self.neighbors(u) {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    /// Largest connected component; ties go to the component holding the
    /// lowest node id.
    pub fn largest_component(&self) -> Vec<usize> {
        let mut best: Vec<usize> = Vec::new();
        for c in self.components() {
            if c.len() > best.len() {
                best = c;
            }
        }
        best
    }

    /// Sum and maximum of shortest-path distances from every node of
    /// `sources` to everything it reaches. Runs 64 breadth-first searches
    /// at once with one bit per source, so each level is a single sweep
    /// over the adjacency lists.
    fn distance_totals(&self, sources: &[usize]) -> (u64, usize) {
        let n = self.n();
        sources
            .par_chunks(64)
            .map(|batch| {
                let mut seen = vec![0u64; n];
                let mut frontier = vec![0u64; n];
                let mut next = vec![0u64; n];
                for (k, &s) in batch.iter().enumerate() {
                    seen[s] |= 1 << k;
                    frontier[s] |= 1 << k;
                }
                let (mut sum, mut max) = (0u64, 0usize);
                for level in 1.. {
                    let mut reached = 0u64;
                    for v in 0..n {
                        let mut bits = 0u64;
                        for &u in self.neighbors(v) {
                            bits |= frontier[u];
                        }
                        bits &= !seen[v];
                        next[v] = bits;
                        reached += bits.count_ones() as u64;
                    }
                    if reached == 0 {
                        break;
                    }
                    for v in 0..n {
                        seen[v] |= next[v];
                    }
                    std::mem::swap(&mut frontier, &mut next);
                    sum += reached * level as u64;
                    max = level;
                }
                (sum, max)
            })
            .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1.max(b.1)))
    }

    pub fn summary(&self) -> GraphSummary {
        let n = self.n();
        let lc = self.largest_component();
        let lc_size = lc.len().max(1);
        let (sum, max) = if lc.len() > 1 { self.distance_totals(&lc) } else { (0, 0) };
        let pairs = (lc.len() * lc.len().saturating_sub(1)) as f64;
        GraphSummary {
            n,
            edge_count: self.edge_count(),
            avg_degree: self.avg_degree(),
            apl: if pairs > 0.0 { sum as f64 / pairs } else { 0.0 },
            diameter: max,
            largest_component_size: lc_size,
            largest_component_fraction: if n == 0 { 0.0 } else { lc_size as f64 / n as f64 },
        }
    }

    /// Boundary means and size moments of s-neighborhoods for `s <= s_max`
    /// and `k <= k_max`.
    pub fn neighborhood_profile(&self, s_max: usize, k_max: u32) -> NeighborhoodProfile {
        let n = self.n();
        let per_node: Vec<Vec<u64>> = (0..n)
            .into_par_iter()
            .map_init(
                || Bfs::new(n),
                |bfs, i| {
                    let mut counts = vec![0u64; s_max + 1];
                    bfs.run(self, i, s_max, |_, d| counts[d] += 1);
                    counts
                },
            )
            .collect();
        let mut boundary_mean = vec![0.0; s_max + 1];
        let mut moments = vec![vec![0.0; k_max as usize + 1]; s_max + 1];
        for counts in &per_node {
            let mut size = 0u64;
            for s in 0..=s_max {
                boundary_mean[s] += counts[s] as f64;
                size += counts[s];
                for k in 0..=k_max {
                    moments[s][k as usize] += (size as f64).powi(k as i32);
                }
            }
        }
        let scale = if n == 0 { 0.0 } else { 1.0 / n as f64 };
        boundary_mean.iter_mut().for_each(|v| *v *= scale);
        moments.iter_mut().flatten().for_each(|v| *v *= scale);
        NeighborhoodProfile { boundary_mean, moments }
    }

    /// Reads the whitespace-separated edge-list format. Lines starting with
    /// `#` are comments, except a `# nodes <n>` header which fixes the node
    /// count so that isolated trailing nodes survive a round trip.
    pub fn read_edge_list<R: BufRead>(reader: R, symmetrize: bool) -> Result<(Self, BuildReport)> {
        let (n, edges) = read_pairs(reader)?;
        Self::from_edges(n, &edges, symmetrize)
    }

    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# nodes {}", self.n())?;
        for (i, j) in self.edges() {
            writeln!(w, "{i} {j}")?;
        }
        Ok(())
    }
}

/// Parses an edge list into `(n, pairs)`; `n` comes from the `# nodes`
/// header when present and otherwise from the largest id seen.
pub fn read_pairs<R: BufRead>(reader: R) -> Result<(usize, Vec<(usize, usize)>)> {
    let mut declared: Option<usize> = None;
    let mut edges = Vec::new();
    let mut max_id: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('#') {
            let mut it = rest.split_whitespace();
            if it.next() == Some("nodes") {
                if let Some(v) = it.next().and_then(|v| v.parse().ok()) {
                    declared = Some(v);
                }
            }
            continue;
        }
        let mut it = t.split_whitespace();
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|v| v.parse::<usize>().ok())
                .ok_or_else(|| Error::input(format!("line {}: expected two non-negative integers", lineno + 1)))
        };
        let a = parse(it.next())?;
        let b = parse(it.next())?;
        max_id = Some(max_id.map_or(a.max(b), |m: usize| m.max(a).max(b)));
        edges.push((a, b));
    }
    let inferred = max_id.map_or(0, |m| m + 1);
    let n = match declared {
        Some(d) if d < inferred => {
            return Err(Error::input(format!("edge list declares {d} nodes but references node {}", inferred - 1)))
        }
        Some(d) => d,
        None => inferred,
    };
    Ok((n, edges))
}

/// Directed out-neighbor lists, used when exposure counts follow link
/// direction while distances use the symmetrized graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutLinks {
    lists: Vec<Vec<usize>>,
}

impl OutLinks {
    pub fn from_arcs(n: usize, arcs: &[(usize, usize)]) -> Result<Self> {
        let mut lists = vec![Vec::new(); n];
        for &(a, b) in arcs {
            if a >= n || b >= n {
                return Err(Error::input(format!("arc ({a},{b}) references a node >= n={n}")));
            }
            if a != b {
                lists[a].push(b);
            }
        }
        for l in &mut lists {
            l.sort_unstable();
            l.dedup();
        }
        Ok(OutLinks { lists })
    }

    pub fn n(&self) -> usize {
        self.lists.len()
    }

    pub fn of(&self, i: usize) -> &[usize] {
        &self.lists[i]
    }
}

/// Neighbor lists that exposure mappings count over: the undirected graph
/// or, when supplied, directed out-links.
#[derive(Debug, Clone, Copy)]
pub enum Links<'a> {
    Undirected(&'a Graph),
    Directed(&'a OutLinks),
}

impl<'a> Links<'a> {
    pub fn new(g: &'a Graph, out: Option<&'a OutLinks>) -> Self {
        match out {
            Some(o) => Links::Directed(o),
            None => Links::Undirected(g),
        }
    }

    #[inline]
    pub fn of(&self, i: usize) -> &'a [usize] {
        match self {
            Links::Undirected(g) => g.neighbors(i),
            Links::Directed(o) => o.of(i),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Links::Undirected(g) => g.n(),
            Links::Directed(o) => o.n(),
        }
    }
}

/// Reusable BFS scratch space; resets only the entries it touched.
pub(crate) struct Bfs {
    dist: Vec<usize>,
    queue: Vec<usize>,
}

impl Bfs {
    pub(crate) fn new(n: usize) -> Self {
        Bfs { dist: vec![usize::MAX; n], queue: Vec::new() }
    }

    /// Visits every node within `cap` of `source` in nondecreasing
    /// distance order.
    pub(crate) fn run(&mut self, g: &Graph, source: usize, cap: usize, mut visit: impl FnMut(usize, usize)) {
        self.queue.clear();
        self.queue.push(source);
        self.dist[source] = 0;
        let mut head = 0;
        while head < self.queue.len() {
            let u = self.queue[head];
            head += 1;
            let du = self.dist[u];
            visit(u, du);
            if du == cap {
                continue;
            }
            for &v in g.neighbors(u) {
                if self.dist[v] == usize::MAX {
                    self.dist[v] = du + 1;
                    self.queue.push(v);
                }
            }
        }
        for &u in &self.queue {
            self.dist[u] = usize::MAX;
        }
    }
}

/// Topology summary of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub n: usize,
    pub edge_count: usize,
    pub avg_degree: f64,
    /// Mean path length over ordered pairs `i != j` of the largest component.
    pub apl: f64,
    pub diameter: usize,
    pub largest_component_size: usize,
    pub largest_component_fraction: f64,
}

/// Mean boundary sizes and size moments of s-neighborhoods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodProfile {
    /// `boundary_mean[s]` is the average number of nodes at distance exactly `s`.
    pub boundary_mean: Vec<f64>,
    /// `moments[s][k]` is the average of `|N(i, s)|^k`.
    pub moments: Vec<Vec<f64>>,
}

impl NeighborhoodProfile {
    pub fn moment(&self, s: usize, k: u32) -> f64 {
        self.moments[s][k as usize]
    }

    pub fn s_max(&self) -> usize {
        self.boundary_mean.len() - 1
    }
}
