mod common;

use common::*;
use interfere::graph::Graph;
use interfere::netgen::{self, RadiusRule};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn capped_bfs_matches_floyd_warshall(seed in 0u64..10_000, cap in 0usize..6) {
        let mut r = rng(seed);
        let n = r.random_range(1..=50);
        let g = erdos_renyi(n, r.random_range(0.01..0.3), &mut r);
        let d = floyd_warshall(&g);
        for i in 0..n {
            let got = g.capped_bfs(i, cap);
            for j in 0..n {
                let want = (d[i][j] <= cap).then_some(d[i][j]);
                prop_assert_eq!(got.get(&j).copied(), want);
            }
        }
    }

    #[test]
    fn distances_symmetric_and_metric(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let n = r.random_range(2..=30);
        let g = erdos_renyi(n, 0.12, &mut r);
        let rows: Vec<_> = (0..n).map(|i| g.capped_bfs(i, n)).collect();
        for i in 0..n {
            for (&j, &dij) in &rows[i] {
                prop_assert_eq!(rows[j].get(&i), Some(&dij));
                for (&k, &djk) in &rows[j] {
                    let dik = rows[i].get(&k).copied();
                    prop_assert!(dik.is_some_and(|v| v <= dij + djk));
                }
            }
        }
    }
}

#[test]
fn apl_matches_full_distance_matrix() {
    let mut r = rng(17);
    for _ in 0..20 {
        let n = r.random_range(2..=200);
        let g = erdos_renyi(n, r.random_range(1.0..4.0) / n as f64, &mut r);
        let s = g.summary();
        let d = floyd_warshall(&g);
        // largest component, ties to the lowest node id
        let mut best: Vec<usize> = vec![];
        let mut seen = vec![false; n];
        for i in 0..n {
            if seen[i] {
                continue;
            }
            let comp: Vec<usize> = (0..n).filter(|&j| d[i][j] != usize::MAX).collect();
            comp.iter().for_each(|&j| seen[j] = true);
            if comp.len() > best.len() {
                best = comp;
            }
        }
        let (mut total, mut pairs, mut diam) = (0usize, 0usize, 0usize);
        for &i in &best {
            for &j in &best {
                if i != j {
                    total += d[i][j];
                    pairs += 1;
                    diam = diam.max(d[i][j]);
                }
            }
        }
        let apl = if pairs == 0 { 0.0 } else { total as f64 / pairs as f64 };
        assert!((s.apl - apl).abs() < 1e-12, "{} vs {apl}", s.apl);
        assert_eq!(s.diameter, diam);
        assert_eq!(s.largest_component_size, best.len());
    }
}

#[test]
fn small_summaries() {
    let s = path(3).summary();
    assert!((s.apl - 4.0 / 3.0).abs() < 1e-15);
    assert_eq!(s.diameter, 2);
    assert!((s.avg_degree - 4.0 / 3.0).abs() < 1e-15);

    let k4: Vec<_> = (0..4).flat_map(|i| (i + 1..4).map(move |j| (i, j))).collect();
    let s = Graph::from_edges(4, &k4, false).unwrap().0.summary();
    assert_eq!((s.apl, s.diameter, s.avg_degree), (1.0, 1, 3.0));

    let s = Graph::from_edges(4, &[(0, 1), (2, 3)], false).unwrap().0.summary();
    assert_eq!((s.largest_component_size, s.apl), (2, 1.0));

    let s = Graph::empty(1).summary();
    assert_eq!((s.apl, s.diameter, s.largest_component_size), (0.0, 0, 1));

    let (tri, _) = Graph::from_edges(3, &[(0, 1), (1, 2), (2, 0)], true).unwrap();
    assert_eq!(tri.edge_count(), 3);
}

#[test]
fn profile_on_path() {
    let p = path(3).neighborhood_profile(2, 2);
    assert!((p.boundary_mean[1] - 4.0 / 3.0).abs() < 1e-15);
    assert!((p.moment(1, 2) - 17.0 / 3.0).abs() < 1e-12);
    let e = Graph::empty(5).neighborhood_profile(3, 1);
    assert!(e.boundary_mean[1..].iter().all(|&v| v == 0.0));
}

#[test]
fn edge_list_round_trip_keeps_isolated_nodes() {
    let g = Graph::from_edges(6, &[(0, 1), (1, 3)], false).unwrap().0;
    let mut buf = Vec::new();
    g.write_edge_list(&mut buf).unwrap();
    let (h, _) = Graph::read_edge_list(&buf[..], false).unwrap();
    assert_eq!(g, h);
    assert_eq!(g.summary(), h.summary());
}

#[test]
fn configuration_model_respects_degrees() {
    let mut r = rng(4);
    for seed in 0..30 {
        let n = r.random_range(5..80);
        let degrees: Vec<usize> = (0..n).map(|_| r.random_range(0..5.min(n - 1))).collect();
        let (g, rep) = netgen::configuration_model(&degrees, seed).unwrap();
        for i in 0..n {
            let allowed = degrees[i] + usize::from(rep.padded_node == Some(i));
            assert!(g.degree(i) <= allowed);
        }
        let (h, _) = netgen::configuration_model(&degrees, seed).unwrap();
        assert_eq!(g, h);
    }
    assert_eq!(netgen::configuration_model(&[1, 1], 9).unwrap().0.edge_count(), 1);
}

#[test]
fn configuration_model_sparse_erasure() {
    let degrees = vec![8usize; 805];
    for seed in 0..100 {
        let avg = netgen::configuration_model(&degrees, seed).unwrap().0.avg_degree();
        assert!((7.0..=8.0).contains(&avg), "seed {seed}: {avg}");
    }
}

#[test]
fn rgg_matches_brute_force() {
    for seed in 0..20 {
        let n = 50 + 20 * seed as usize;
        let (g, pl) = netgen::rgg(n, 6.0, RadiusRule::Sqrt, seed).unwrap();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (pl.positions[i], pl.positions[j]);
                if ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() <= pl.radius {
                    edges.push((i, j));
                }
            }
        }
        assert_eq!(g, Graph::from_edges(n, &edges, false).unwrap().0);
    }
    assert_eq!(netgen::rgg(1, 3.0, RadiusRule::Sqrt, 0).unwrap().0.edge_count(), 0);
}

#[test]
fn rgg_mean_degree_near_kappa() {
    let mean: f64 = (0..100).map(|s| netgen::rgg(2725, 8.0, RadiusRule::Sqrt, s).unwrap().0.avg_degree()).sum::<f64>() / 100.0;
    assert!((mean - 8.0).abs() < 0.4, "{mean}");
}

#[test]
fn regime_separation_on_calibration() {
    let degrees = netgen::calibration_degrees(1);
    assert_eq!(degrees.len(), 805);
    let mean = degrees.iter().sum::<usize>() as f64 / degrees.len() as f64;
    for seed in 0..5 {
        let cm = netgen::configuration_model(&degrees, seed).unwrap().0.summary();
        let rg = netgen::rgg(805, mean, RadiusRule::Sqrt, seed).unwrap().0.summary();
        assert!(cm.apl < 5.0, "configuration apl {}", cm.apl);
        assert!(rg.apl > 10.0, "rgg apl {}", rg.apl);
    }
}

#[test]
fn bundled_files_match_generator() {
    for k in [1, 2, 4] {
        let text = netgen::bundled_calibration(k).unwrap();
        assert_eq!(netgen::read_degrees(text.as_bytes()).unwrap(), netgen::calibration_degrees(k));
    }
}
