//! Seeded random network generators: the erased configuration model and
//! the random geometric graph on the unit square.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// What the configuration model had to change to produce a simple graph.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigModelReport {
    /// Index whose degree was incremented to make the stub count even.
    pub padded_node: Option<usize>,
    pub erased_self_loops: usize,
    pub erased_multi_edges: usize,
}

/// Erased configuration model: stubs are matched uniformly at random and
/// self-loops and repeated pairs are dropped. Realized degrees never
/// exceed the requested ones (except for the padded node, see report).
pub fn configuration_model(degrees: &[usize], seed: u64) -> Result<(Graph, ConfigModelReport)> {
    let n = degrees.len();
    let mut degrees = degrees.to_vec();
    let mut report = ConfigModelReport::default();
    if let Some((i, &d)) = degrees.iter().enumerate().find(|(_, &d)| n > 0 && d >= n) {
        return Err(Error::input(format!("degree {d} of node {i} is not below n={n}")));
    }
    if degrees.iter().sum::<usize>() % 2 == 1 {
        // Bump the lowest-degree node; it always has room below n-1 unless
        // the sequence is complete, which cannot have an odd sum.
        let (i, _) = degrees.iter().enumerate().min_by_key(|(_, &d)| d).expect("odd sum implies nonempty");
        degrees[i] += 1;
        report.padded_node = Some(i);
    }
    let mut stubs: Vec<usize> = Vec::with_capacity(degrees.iter().sum());
    for (i, &d) in degrees.iter().enumerate() {
        stubs.extend(std::iter::repeat_n(i, d));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    stubs.shuffle(&mut rng);
    let mut pairs = Vec::with_capacity(stubs.len() / 2);
    for pair in stubs.chunks_exact(2) {
        let (a, b) = (pair[0], pair[1]);
        if a == b {
            report.erased_self_loops += 1;
        } else {
            pairs.push((a.min(b), a.max(b)));
        }
    }
    pairs.sort_unstable();
    let before = pairs.len();
    pairs.dedup();
    report.erased_multi_edges = before - pairs.len();
    let (g, _) = Graph::from_edges(n, &pairs, false)?;
    Ok((g, report))
}

/// How the connection radius is derived from the expected degree.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadiusRule {
    /// `r = sqrt(kappa / (pi n))`, which makes `kappa` the limiting
    /// expected degree.
    #[default]
    Sqrt,
    /// `r = (kappa / (pi n))^2`, kept for reproducing the printed formula.
    Literal,
}

impl RadiusRule {
    pub fn radius(self, n: usize, kappa: f64) -> f64 {
        let base = kappa / (std::f64::consts::PI * n as f64);
        match self {
            RadiusRule::Sqrt => base.sqrt(),
            RadiusRule::Literal => base * base,
        }
    }
}

/// Node positions and radius of a random geometric graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RggPlacement {
    pub positions: Vec<[f64; 2]>,
    pub radius: f64,
}

/// Random geometric graph: `n` uniform points in `[0,1]^2`, linked when
/// their Euclidean distance is at most the radius.
pub fn rgg(n: usize, kappa: f64, rule: RadiusRule, seed: u64) -> Result<(Graph, RggPlacement)> {
    if n == 0 {
        return Err(Error::input("rgg needs n >= 1"));
    }
    if !(kappa > 0.0) {
        return Err(Error::input(format!("rgg needs kappa > 0, got {kappa}")));
    }
    let radius = rule.radius(n, kappa);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let g = geometric_graph(&positions, radius);
    Ok((g, RggPlacement { positions, radius }))
}

/// Links every pair of points within `radius`, using a uniform grid so
/// only neighboring cells are compared.
pub fn geometric_graph(positions: &[[f64; 2]], radius: f64) -> Graph {
    let n = positions.len();
    let max_cells = ((n as f64).sqrt().ceil() as usize).max(1) * 2;
    let cells = ((1.0 / radius).floor() as usize).clamp(1, max_cells);
    let cell_of = |x: f64| ((x * cells as f64) as usize).min(cells - 1);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); cells * cells];
    for (i, p) in positions.iter().enumerate() {
        buckets[cell_of(p[1]) * cells + cell_of(p[0])].push(i);
    }
    let r2 = radius * radius;
    let mut edges = Vec::new();
    for (i, p) in positions.iter().enumerate() {
        let (cx, cy) = (cell_of(p[0]) as isize, cell_of(p[1]) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (cx + dx, cy + dy);
                if x < 0 || y < 0 || x >= cells as isize || y >= cells as isize {
                    continue;
                }
                for &j in &buckets[y as usize * cells + x as usize] {
                    if j > i {
                        let q = positions[j];
                        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                        if d2 <= r2 {
                            edges.push((i, j));
                        }
                    }
                }
            }
        }
    }
    Graph::from_edges(n, &edges, false).expect("ids in range").0
}

/// School sizes used by the bundled synthetic calibration, largest first.
pub const CALIBRATION_SCHOOL_SIZES: [usize; 5] = [805, 651, 635, 634, 581];
/// Mean out-degree the calibration targets.
pub const CALIBRATION_MEAN_DEGREE: f64 = 7.96;
/// Survey cap on the number of named friends.
pub const CALIBRATION_MAX_DEGREE: u64 = 10;
pub const CALIBRATION_SEED: u64 = 20_200_805;
/// Eligible units per school in the calibration.
pub const CALIBRATION_ELIGIBLE_PER_SCHOOL: usize = 64;

/// Synthetic degree sequence for one school: Binomial(cap, mean/cap)
/// draws, so the mean matches and no node exceeds the naming cap.
pub fn synthetic_school_degrees(size: usize, mean: f64, cap: u64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Binomial::new(cap, mean / cap as f64).expect("valid binomial");
    (0..size).map(|_| dist.sample(&mut rng) as usize).collect()
}

/// Pooled degree sequence of the `schools` largest synthetic schools.
/// Pools nest: the two-school sequence starts with the one-school one.
pub fn calibration_degrees(schools: usize) -> Vec<usize> {
    CALIBRATION_SCHOOL_SIZES
        .iter()
        .take(schools)
        .enumerate()
        .flat_map(|(k, &size)| {
            synthetic_school_degrees(size, CALIBRATION_MEAN_DEGREE, CALIBRATION_MAX_DEGREE, CALIBRATION_SEED + k as u64)
        })
        .collect()
}

/// Bundled calibration files, generated by [`calibration_degrees`].
pub fn bundled_calibration(schools: usize) -> Option<&'static str> {
    match schools {
        1 => Some(include_str!("../data/degrees_1school.txt")),
        2 => Some(include_str!("../data/degrees_2schools.txt")),
        4 => Some(include_str!("../data/degrees_4schools.txt")),
        _ => None,
    }
}

/// Reads a degree sequence: one non-negative integer per line; blank lines
/// and `#` comments are skipped.
pub fn read_degrees<R: BufRead>(reader: R) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(t.parse().map_err(|_| Error::input(format!("degree file line {}: not an integer: {t}", k + 1)))?);
    }
    Ok(out)
}

pub fn write_degrees<W: Write>(degrees: &[usize], mut w: W) -> Result<()> {
    for d in degrees {
        writeln!(w, "{d}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_sequences() {
        for seed in 0..20 {
            let (g, _) = configuration_model(&[1, 1], seed).unwrap();
            assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1)]);
        }
        // [2,2,2]: the only simple realization is the triangle, but stub
        // matching can also produce loops; erasure keeps a subgraph of it.
        let mut saw_triangle = false;
        for seed in 0..50 {
            let (g, r) = configuration_model(&[2, 2, 2], seed).unwrap();
            for (i, j) in g.edges() {
                assert!(i < j && j < 3);
            }
            if r.erased_self_loops == 0 && r.erased_multi_edges == 0 {
                assert_eq!(g.edge_count(), 3);
                saw_triangle = true;
            }
        }
        assert!(saw_triangle);
    }

    #[test]
    fn odd_sum_is_padded() {
        let (_, r) = configuration_model(&[1, 1, 1], 3).unwrap();
        assert_eq!(r.padded_node, Some(0));
    }

    #[test]
    fn degree_too_large_rejected() {
        assert!(configuration_model(&[2, 1], 0).is_err());
    }

    #[test]
    fn rgg_small_cases() {
        let (g, p) = rgg(1, 3.0, RadiusRule::Sqrt, 9).unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(p.positions.len(), 1);
        let far = geometric_graph(&[[0.0, 0.0], [1.0, 1.0]], 1.0);
        assert_eq!(far.edge_count(), 0);
        let near = geometric_graph(&[[0.0, 0.0], [1.0, 1.0]], 2f64.sqrt());
        assert_eq!(near.edge_count(), 1);
    }

    #[test]
    fn radius_rules() {
        let r = RadiusRule::Sqrt.radius(100, std::f64::consts::PI);
        assert!((r - 0.1).abs() < 1e-15);
        let l = RadiusRule::Literal.radius(100, std::f64::consts::PI);
        assert!((l - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn bundled_files_match_generator() {
        for k in [1, 2, 4] {
            let parsed = read_degrees(bundled_calibration(k).unwrap().as_bytes()).unwrap();
            assert_eq!(parsed, calibration_degrees(k), "schools={k}");
        }
        assert_eq!(calibration_degrees(1).len(), 805);
        assert_eq!(calibration_degrees(2).len(), 1456);
        assert_eq!(calibration_degrees(4).len(), 2725);
    }

    #[test]
    fn calibration_mean_near_target() {
        let d = calibration_degrees(4);
        let mean = d.iter().sum::<usize>() as f64 / d.len() as f64;
        assert!((mean - CALIBRATION_MEAN_DEGREE).abs() < 0.1, "{mean}");
        assert!(d.iter().all(|&x| x <= 10));
    }
}
