mod common;

use common::*;
use interfere::design::{pairwise_propensity, propensity, Design, PropensityMethod, PropensityRequest, PropensityTable};
use interfere::estimators::{
    as_variance, exact_estimands, hac_variance, ipw_point, OracleOptions, Sample,
};
use interfere::exposure::ExposureSpec;
use interfere::graph::{Graph, Links};
use interfere::outcomes::{OutcomeModel, Params};
use proptest::prelude::*;
use rand::Rng;

/// Dense quadratic form with the full distance matrix.
fn dense_hac(g: &Graph, units: &[usize], z: &[f64], center: f64, b: usize) -> f64 {
    let d = floyd_warshall(g);
    let mut total = 0.0;
    for (a, &i) in units.iter().enumerate() {
        for (c, &j) in units.iter().enumerate() {
            if d[i][j] <= b {
                total += (z[a] - center) * (z[c] - center);
            }
        }
    }
    total / units.len() as f64
}

#[test]
fn hac_matches_dense_oracle() {
    let mut r = rng(7);
    for case in 0..50 {
        let n = r.random_range(2..=60);
        let g = erdos_renyi(n, r.random_range(0.02..0.2), &mut r);
        let units: Vec<usize> = (0..n).filter(|_| r.random::<f64>() < 0.8).collect();
        if units.is_empty() {
            continue;
        }
        let z: Vec<f64> = units.iter().map(|_| r.random_range(-3.0..3.0)).collect();
        let center = z.iter().sum::<f64>() / z.len() as f64;
        let b = case % 4;
        let fast = hac_variance(&g, &units, &z, center, b).sigma2;
        let slow = dense_hac(&g, &units, &z, center, b);
        assert!((fast - slow).abs() < 1e-12, "case {case}: {fast} vs {slow}");
    }
}

proptest! {
    #[test]
    fn hac_permutation_equivariant(seed in 0u64..500, b in 0usize..4) {
        let mut r = rng(seed);
        let n = r.random_range(2..30);
        let g = erdos_renyi(n, 0.15, &mut r);
        let z: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let units: Vec<usize> = (0..n).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut r);
        let h = g.permuted(&perm);
        // node i becomes perm[i]
        let mut zp = vec![0.0; n];
        for i in 0..n { zp[perm[i]] = z[i]; }
        let a = hac_variance(&g, &units, &z, 0.3, b).sigma2;
        let c = hac_variance(&h, &units, &zp, 0.3, b).sigma2;
        prop_assert!((a - c).abs() < 1e-10 * (1.0 + a.abs()));
    }
}

fn random_model(g: &Graph, r: &mut impl Rng, contagion: bool) -> OutcomeModel {
    let eps: Vec<f64> = (0..g.n()).map(|_| r.random_range(-1.0..1.0)).collect();
    if contagion {
        OutcomeModel::Contagion { params: Params { alpha: -1.0, beta: 1.5, delta: 1.0, gamma: 1.0 }, epsilon: eps }
    } else {
        OutcomeModel::Lim { params: Params { alpha: -1.0, beta: 0.6, delta: 1.0, gamma: 1.0 }, epsilon: eps }
    }
}

/// `sum_d P(d) tau_hat(d)` with propensities from `propensity()`.
fn expected_tau_hat(model: &OutcomeModel, design: &Design, exposure: &ExposureSpec, g: &Graph, units: &[usize], table: &PropensityTable) -> f64 {
    let support = design.support(1 << 20).unwrap();
    let links = Links::Undirected(g);
    support
        .iter()
        .map(|(d, p)| {
            let y = model.evaluate(g, &d).unwrap();
            let t = exposure.compute(&d, links);
            p * ipw_point(&Sample::new(units.to_vec(), &y, &t, table), 1, 0).unwrap().tau
        })
        .sum()
}

#[test]
fn four_node_any_neighbor_unbiased() {
    let g = path(4);
    let design = Design::bernoulli(4, &[0, 1, 2, 3], 0.5).unwrap();
    let model = OutcomeModel::Lim { params: Params { alpha: 0.0, beta: 0.5, delta: 1.0, gamma: 1.0 }, epsilon: vec![0.3, -0.1, 0.2, 0.0] };
    let exposure = ExposureSpec::AnyTreatedNeighbor;
    let ex = exact_estimands(&model, &design, &exposure, &g, &OracleOptions { t: 1, t0: 0, b: 2, units: None }).unwrap();
    let table = propensity(&design, &exposure, Links::Undirected(&g), PropensityRequest::ClosedForm).unwrap();
    let e = expected_tau_hat(&model, &design, &exposure, &g, &ex.units, &table);
    assert!((e - ex.tau).abs() < 1e-12);
    assert_eq!(ex.support_size, 16);
}

#[test]
fn five_node_path_lim_unbiased() {
    let g = path(5);
    let design = Design::bernoulli(5, &[0, 1, 2, 3, 4], 0.5).unwrap();
    let model = OutcomeModel::Lim { params: Params { alpha: 1.0, beta: 0.5, delta: 0.5, gamma: 1.0 }, epsilon: vec![0.0; 5] };
    let ex = exact_estimands(&model, &design, &ExposureSpec::AnyTreatedNeighbor, &g, &OracleOptions { t: 1, t0: 0, b: 2, units: None }).unwrap();
    assert_eq!(ex.support_size, 32);
    assert!((ex.expected_tau_hat - ex.tau).abs() < 1e-12);
}

#[test]
fn randomized_instances_unbiased() {
    let mut r = rng(99);
    let mut done = 0;
    let mut attempt = 0u32;
    while done < 24 {
        attempt += 1;
        let n = r.random_range(4..=9);
        let g = erdos_renyi(n, 0.4, &mut r);
        let design = if attempt % 2 == 0 { random_bernoulli(n, &mut r) } else { random_blocks(n, &mut r) };
        let exposure = if attempt % 3 == 0 { ExposureSpec::OwnTreatment } else { ExposureSpec::AnyTreatedNeighbor };
        let model = random_model(&g, &mut r, attempt % 4 < 2);
        let Ok(ex) = exact_estimands(&model, &design, &exposure, &g, &OracleOptions { t: 1, t0: 0, b: 1, units: None }) else {
            continue;
        };
        let table = propensity(&design, &exposure, Links::Undirected(&g), PropensityRequest::ClosedForm).unwrap();
        let e = expected_tau_hat(&model, &design, &exposure, &g, &ex.units, &table);
        assert!((e - ex.tau).abs() < 1e-10, "{e} vs {}", ex.tau);
        assert!((ex.expected_tau_hat - ex.tau).abs() < 1e-10);
        done += 1;
    }
}

#[test]
fn constant_outcomes_have_zero_effect() {
    let mut r = rng(3);
    let g = erdos_renyi(7, 0.4, &mut r);
    let design = random_bernoulli(7, &mut r);
    let model = OutcomeModel::OwnTreatment { base: vec![2.5; 7], effect: vec![0.0; 7] };
    let ex = exact_estimands(&model, &design, &ExposureSpec::AnyTreatedNeighbor, &g, &OracleOptions { t: 1, t0: 0, b: 1, units: None });
    if let Ok(ex) = ex {
        assert!(ex.expected_tau_hat.abs() < 1e-12);
        assert!(ex.tau.abs() < 1e-12);
    }
}

fn exposure_table(g: &Graph, r: &mut impl Rng, homogeneous: bool) -> OutcomeModel {
    let table = (0..g.n())
        .map(|_| {
            let base = r.random_range(-2.0..2.0);
            let eff = if homogeneous { 1.5 } else { r.random_range(-1.0..3.0) };
            vec![base, base + eff]
        })
        .collect();
    OutcomeModel::ExposureTable { exposure: ExposureSpec::AnyTreatedNeighbor, table }
}

#[test]
fn as_bias_matches_closed_form() {
    let mut r = rng(11);
    let mut checked = 0;
    while checked < 15 {
        let n = r.random_range(3..=6);
        let g = erdos_renyi(n, 0.5, &mut r);
        let design = if checked % 2 == 0 { random_bernoulli(n, &mut r) } else { random_blocks(n, &mut r) };
        let model = exposure_table(&g, &mut r, false);
        let Ok(ex) = exact_estimands(&model, &design, &ExposureSpec::AnyTreatedNeighbor, &g, &OracleOptions { t: 1, t0: 0, b: 2, units: None }) else {
            continue;
        };
        let gap = ex.expected_sigma2_as.unwrap() - ex.true_variance;
        let r_as = ex.r_n_as.unwrap();
        assert!((gap - r_as).abs() < 1e-10 * (1.0 + r_as.abs()), "{gap} vs {r_as}");
        checked += 1;
    }
}

#[test]
fn bias_decomposition_identity() {
    let mut r = rng(21);
    for _ in 0..20 {
        let n = r.random_range(3..=8);
        let g = erdos_renyi(n, 0.5, &mut r);
        let design = random_bernoulli(n, &mut r);
        let model = exposure_table(&g, &mut r, false);
        let diameter = g.summary().diameter.max(1);
        let Ok(ex) = exact_estimands(&model, &design, &ExposureSpec::AnyTreatedNeighbor, &g, &OracleOptions { t: 1, t0: 0, b: diameter, units: None }) else {
            continue;
        };
        let lhs = ex.expected_sigma2 - ex.true_variance;
        let rhs = ex.r_n + (ex.expected_sigma2_star - ex.true_variance) + ex.expected_cross + ex.expected_remainder;
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        assert!(ex.identity_residual < 1e-10);
        assert!(ex.expected_cross.abs() < 1e-10);
    }
}

#[test]
fn homogeneous_effects_have_zero_r_n() {
    let mut r = rng(5);
    for b in 0..4 {
        let g = erdos_renyi(6, 0.5, &mut r);
        let design = Design::bernoulli(6, &[0, 1, 2, 3, 4, 5], 0.5).unwrap();
        let model = exposure_table(&g, &mut r, true);
        let ex = exact_estimands(&model, &design, &ExposureSpec::AnyTreatedNeighbor, &g, &OracleOptions { t: 1, t0: 0, b, units: None }).unwrap();
        assert!(ex.r_n.abs() < 1e-12);
    }
}

#[test]
fn oracle_as_uses_same_formula_as_estimator() {
    // closed-form pair table and enumerated one give the same estimate
    let g = path(5);
    let design = Design::bernoulli(5, &[0, 2, 4], 0.5).unwrap();
    let links = Links::Undirected(&g);
    let exposure = ExposureSpec::AnyTreatedNeighbor;
    let units = vec![1, 3];
    let table = pairwise_propensity(&design, &exposure, links, &units, 0, 0).unwrap();
    assert_eq!(table.pair_method(), Some(PropensityMethod::Exact));
    // 1 and 3 share neighbor 2; 1 also sees 0 and 3 also sees 4
    assert!(table.pair(1, 3, 1, 0).unwrap() > 0.0);
    let y = [0.0, 1.0, 0.0, 2.0, 0.0];
    let t = [0, 1, 0, 0, 0];
    let v = as_variance(&Sample::new(units, &y, &t, &table), 1, 0).unwrap();
    assert!(v.is_finite());
}
