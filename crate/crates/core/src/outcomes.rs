//! Potential-outcome engines (linear-in-means, complex contagion, and
//! exposure tables) and exhaustive interference diagnostics.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::design::Support;
use crate::error::{Error, Result};
use crate::exposure::ExposureSpec;
use crate::graph::{Graph, Links};
use crate::netgen::RggPlacement;
use crate::seeds;

/// Structural parameters shared by both outcome models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub gamma: f64,
}

pub type LimParams = Params;
pub type ContagionParams = Params;

/// Model family plus parameters, as selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelSpec {
    Lim(LimParams),
    Contagion(ContagionParams),
}

impl ModelSpec {
    pub fn params(&self) -> Params {
        match *self {
            ModelSpec::Lim(p) | ModelSpec::Contagion(p) => p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Lim(p) if !(p.beta.abs() < 1.0) => {
                Err(Error::input(format!("linear-in-means needs |beta| < 1, got {}", p.beta)))
            }
            ModelSpec::Contagion(p) if !(p.beta >= 0.0) => {
                Err(Error::input(format!("contagion needs beta >= 0, got {}", p.beta)))
            }
            _ => Ok(()),
        }
    }

    pub fn with_epsilon(self, epsilon: Vec<f64>) -> OutcomeModel {
        match self {
            ModelSpec::Lim(params) => OutcomeModel::Lim { params, epsilon },
            ModelSpec::Contagion(params) => OutcomeModel::Contagion { params, epsilon },
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (tag, p) = match self {
            ModelSpec::Lim(p) => ("lim", p),
            ModelSpec::Contagion(p) => ("contagion", p),
        };
        write!(f, "{tag}:{},{},{},{}", p.alpha, p.beta, p.delta, p.gamma)
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (tag, rest) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::input(format!("model `{s}` should look like lim:a,b,d,g or contagion:a,b,d,g")))?;
        let v = rest
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| Error::input(format!("bad model parameter `{x}`"))))
            .collect::<Result<Vec<_>>>()?;
        let [alpha, beta, delta, gamma] = v[..] else {
            return Err(Error::input(format!("model `{s}` needs exactly four parameters")));
        };
        let p = Params { alpha, beta, delta, gamma };
        let spec = match tag {
            "lim" => ModelSpec::Lim(p),
            "contagion" => ModelSpec::Contagion(p),
            other => return Err(Error::input(format!("unknown model `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl TryFrom<String> for ModelSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModelSpec> for String {
    fn from(m: ModelSpec) -> String {
        m.to_string()
    }
}

/// A potential-outcome map `d -> Y(d)` with frozen shocks.
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeModel {
    Lim { params: LimParams, epsilon: Vec<f64> },
    Contagion { params: ContagionParams, epsilon: Vec<f64> },
    /// `Y_i(d) = table[i][T_i(d)]`: a correctly specified exposure model.
    ExposureTable { exposure: ExposureSpec, table: Vec<Vec<f64>> },
    /// `Y_i(d) = d_i * effect[i] + base[i]`; no interference.
    OwnTreatment { base: Vec<f64>, effect: Vec<f64> },
}

impl OutcomeModel {
    pub fn evaluate(&self, g: &Graph, d: &[u8]) -> Result<Vec<f64>> {
        match self {
            OutcomeModel::Lim { params, epsilon } => linear_in_means(g, params, epsilon, d),
            OutcomeModel::Contagion { params, epsilon } => {
                Ok(complex_contagion(g, params, epsilon, d, None)?.into_iter().map(f64::from).collect())
            }
            OutcomeModel::ExposureTable { exposure, table } => {
                let links = Links::Undirected(g);
                Ok((0..g.n()).map(|i| table[i][exposure.exposure_of(i, d, links) as usize]).collect())
            }
            OutcomeModel::OwnTreatment { base, effect } => {
                Ok((0..g.n()).map(|i| base[i] + d[i] as f64 * effect[i]).collect())
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            OutcomeModel::Lim { .. } => "lim",
            OutcomeModel::Contagion { .. } => "contagion",
            OutcomeModel::ExposureTable { .. } => "exposure-table",
            OutcomeModel::OwnTreatment { .. } => "own-treatment",
        }
    }

    /// Potential outcome table `Y~_i(t)` when the model is an exposure
    /// table, used by bias formulas that need correct specification.
    pub fn exposure_table(&self) -> Option<(&ExposureSpec, &[Vec<f64>])> {
        match self {
            OutcomeModel::ExposureTable { exposure, table } => Some((exposure, table)),
            _ => None,
        }
    }
}

#[inline]
fn neighbor_mean(g: &Graph, i: usize, v: impl Fn(usize) -> f64) -> f64 {
    let nb = g.neighbors(i);
    if nb.is_empty() {
        0.0
    } else {
        nb.iter().map(|&j| v(j)).sum::<f64>() / nb.len() as f64
    }
}

/// Networks up to this size are solved by dense LU; larger ones iterate.
pub const LIM_DIRECT_MAX_N: usize = 200;
pub const LIM_TOLERANCE: f64 = 1e-10;
const LIM_MAX_ITER: usize = 100_000;

/// Solves `(I - beta A~) Y = alpha + delta A~ d + gamma d + eps`, where
/// `A~` is row-normalized and isolated rows are zero.
pub fn linear_in_means(g: &Graph, p: &LimParams, epsilon: &[f64], d: &[u8]) -> Result<Vec<f64>> {
    let n = g.n();
    if epsilon.len() != n || d.len() != n {
        return Err(Error::input("shock and assignment lengths must equal n"));
    }
    if !(p.beta.abs() < 1.0) {
        return Err(Error::input(format!("linear-in-means needs |beta| < 1, got {}", p.beta)));
    }
    let rhs: Vec<f64> = (0..n)
        .map(|i| p.alpha + p.delta * neighbor_mean(g, i, |j| d[j] as f64) + p.gamma * d[i] as f64 + epsilon[i])
        .collect();
    let y = if n <= LIM_DIRECT_MAX_N {
        let mut m = DMatrix::<f64>::identity(n, n);
        for i in 0..n {
            let nb = g.neighbors(i);
            for &j in nb {
                m[(i, j)] -= p.beta / nb.len() as f64;
            }
        }
        let sol = m
            .lu()
            .solve(&DVector::from_vec(rhs.clone()))
            .ok_or_else(|| Error::Numeric("singular linear-in-means system".into()))?;
        sol.iter().copied().collect()
    } else {
        let mut y = rhs.clone();
        let mut next = vec![0.0; n];
        let mut converged = false;
        for _ in 0..LIM_MAX_ITER {
            for i in 0..n {
                next[i] = rhs[i] + p.beta * neighbor_mean(g, i, |j| y[j]);
            }
            let change = y.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            std::mem::swap(&mut y, &mut next);
            // the residual of the new iterate is at most |beta| times the step
            if change * p.beta.abs() < LIM_TOLERANCE {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Numeric("linear-in-means iteration did not converge".into()));
        }
        y
    };
    let res = lim_residual(g, p, epsilon, d, &y);
    if !(res < LIM_TOLERANCE) {
        return Err(Error::Numeric(format!("linear-in-means residual {res:.3e} above tolerance")));
    }
    Ok(y)
}

/// Max absolute violation of the structural equation at any node.
pub fn lim_residual(g: &Graph, p: &LimParams, epsilon: &[f64], d: &[u8], y: &[f64]) -> f64 {
    (0..g.n())
        .map(|i| {
            let v = p.alpha
                + p.beta * neighbor_mean(g, i, |j| y[j])
                + p.delta * neighbor_mean(g, i, |j| d[j] as f64)
                + p.gamma * d[i] as f64
                + epsilon[i];
            (y[i] - v).abs()
        })
        .fold(0.0, f64::max)
}

/// Synchronous threshold dynamics
/// `Y_i <- 1{alpha + beta frac_i(Y) + delta frac_i(d) + gamma d_i + eps_i > 0}`
/// run from `start` (all zeros by default) until a fixed point.
pub fn complex_contagion(
    g: &Graph,
    p: &ContagionParams,
    epsilon: &[f64],
    d: &[u8],
    start: Option<&[u8]>,
) -> Result<Vec<u8>> {
    let n = g.n();
    if epsilon.len() != n || d.len() != n {
        return Err(Error::input("shock and assignment lengths must equal n"));
    }
    let base: Vec<f64> = (0..n)
        .map(|i| p.alpha + p.delta * neighbor_mean(g, i, |j| d[j] as f64) + p.gamma * d[i] as f64 + epsilon[i])
        .collect();
    let mut y = start.map(<[u8]>::to_vec).unwrap_or_else(|| vec![0; n]);
    let mut next = vec![0u8; n];
    let cap = if n < 20 { 1usize << n } else { 1_000_000 }.max(2);
    for _ in 0..cap {
        for i in 0..n {
            next[i] = (base[i] + p.beta * neighbor_mean(g, i, |j| y[j] as f64) > 0.0) as u8;
        }
        if next == y {
            return Ok(y);
        }
        std::mem::swap(&mut y, &mut next);
    }
    Err(Error::Numeric(format!("contagion did not reach a fixed point within {cap} rounds")))
}

/// Whether `j` can respond to its neighbors' outcomes for some own and
/// neighbor treatment configuration: the threshold interval over
/// `d in {0,1}` and treated share `f in [0,1]` meets `[0, beta]`.
pub fn flippable(p: &ContagionParams, eps: f64) -> bool {
    let c_lo = p.alpha + eps + p.delta.min(0.0) + p.gamma.min(0.0);
    let c_hi = p.alpha + eps + p.delta.max(0.0) + p.gamma.max(0.0);
    let (phi_lo, phi_hi) = (-c_hi, -c_lo);
    phi_hi >= 0.0 && phi_lo <= p.beta
}

/// `max_{s_bar < s <= s_max} ||G^s||_inf^{1/s}` with `G_ij = A_ij sigma_j`.
pub fn contagion_rho(g: &Graph, p: &ContagionParams, epsilon: &[f64], s_bar: usize, s_max: usize) -> Result<f64> {
    if s_bar >= s_max {
        return Err(Error::input(format!("need s_bar < s_max, got {s_bar} >= {s_max}")));
    }
    let sigma: Vec<bool> = epsilon.iter().map(|&e| flippable(p, e)).collect();
    Ok(matrix_power_rho(g.n(), |i| g.neighbors(i).iter().copied().filter(|&j| sigma[j]).collect(), s_bar, s_max))
}

/// Same quantity for an arbitrary 0/1 matrix given by its row supports.
/// Row sums of `G^s` are `G^s 1`, computed by repeated products with a
/// running log-scale so large powers do not overflow.
pub fn matrix_power_rho(n: usize, row: impl Fn(usize) -> Vec<usize>, s_bar: usize, s_max: usize) -> f64 {
    let rows: Vec<Vec<usize>> = (0..n).map(row).collect();
    let mut v = vec![1.0f64; n];
    let mut log_scale = 0.0f64;
    let mut best = 0.0f64;
    for s in 1..=s_max {
        let next: Vec<f64> = rows.iter().map(|r| r.iter().map(|&j| v[j]).sum()).collect();
        let m = next.iter().copied().fold(0.0, f64::max);
        if m == 0.0 {
            break;
        }
        log_scale += m.ln();
        v = next.into_iter().map(|x| x / m).collect();
        if s > s_bar {
            best = best.max((log_scale / s as f64).exp());
        }
    }
    best
}

/// Exhaustive `Delta_i(s)` for `s = 0..=s_max`: the largest change in unit
/// `i`'s outcome between assignments that agree on its `s`-neighborhood.
/// With a `support`, only assignments in the design's support are used.
pub fn ani_delta_profile(
    model: &OutcomeModel,
    g: &Graph,
    unit: usize,
    s_max: usize,
    support: Option<&Support>,
) -> Result<Vec<f64>> {
    const MAX_N: usize = 16;
    let n = g.n();
    if n > MAX_N {
        return Err(Error::Capacity(format!(
            "exhaustive interference profile needs n <= {MAX_N}, got {n}; sample assignments instead"
        )));
    }
    if unit >= n {
        return Err(Error::input(format!("unit {unit} >= n={n}")));
    }
    let mut d = vec![0u8; n];
    let mut draws: Vec<(u32, f64)> = Vec::new();
    let mut push = |d: &[u8]| -> Result<()> {
        let key = d.iter().enumerate().fold(0u32, |k, (j, &v)| k | (v as u32) << j);
        draws.push((key, model.evaluate(g, d)?[unit]));
        Ok(())
    };
    match support {
        Some(sup) => {
            for k in 0..sup.len() {
                if sup.fill(k, &mut d) > 0.0 {
                    push(&d)?;
                }
            }
        }
        None => {
            for key in 0..1u32 << n {
                (0..n).for_each(|j| d[j] = (key >> j & 1) as u8);
                push(&d)?;
            }
        }
    }
    let dist = g.capped_bfs(unit, s_max);
    (0..=s_max)
        .map(|s| {
            let mask = dist.iter().filter(|(_, &l)| l <= s).fold(0u32, |m, (&j, _)| m | 1 << j);
            let mut groups: HashMap<u32, (f64, f64)> = HashMap::new();
            for &(key, y) in &draws {
                let e = groups.entry(key & mask).or_insert((y, y));
                e.0 = e.0.min(y);
                e.1 = e.1.max(y);
            }
            Ok(groups.values().map(|(lo, hi)| hi - lo).fold(0.0, f64::max))
        })
        .collect()
}

/// How the idiosyncratic shocks are drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpsilonMode {
    /// iid standard normal.
    #[default]
    Normal,
    /// Standard normal plus the centered first coordinate of the unit's
    /// position, which with geometric networks induces homophily.
    Homophily,
}

impl FromStr for EpsilonMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(EpsilonMode::Normal),
            "homophily" => Ok(EpsilonMode::Homophily),
            other => Err(Error::input(format!("unknown shock mode `{other}` (normal, homophily)"))),
        }
    }
}

pub fn draw_epsilon(n: usize, mode: EpsilonMode, placement: Option<&RggPlacement>, seed: u64, index: u64) -> Result<Vec<f64>> {
    let mut rng = seeds::rng(seed, seeds::stream::EPSILON, index);
    let nu: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    match mode {
        EpsilonMode::Normal => Ok(nu),
        EpsilonMode::Homophily => {
            let pl = placement.ok_or_else(|| Error::input("homophily shocks need node positions (geometric graph)"))?;
            if pl.positions.len() != n {
                return Err(Error::input("position count does not match n"));
            }
            Ok(nu.iter().zip(&pl.positions).map(|(v, p)| v + p[0] - 0.5).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn path(n: usize) -> Graph {
        let e: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        Graph::from_edges(n, &e, false).unwrap().0
    }

    fn p(alpha: f64, beta: f64, delta: f64, gamma: f64) -> Params {
        Params { alpha, beta, delta, gamma }
    }

    #[test]
    fn lim_without_peers() {
        let g = path(4);
        let eps = [0.1, -0.2, 0.3, 0.0];
        let y = linear_in_means(&g, &p(1.0, 0.0, 0.0, 2.0), &eps, &[1, 0, 0, 1]).unwrap();
        assert_relative_eq!(y[0], 3.1, epsilon = 1e-12);
        assert_relative_eq!(y[1], 0.8, epsilon = 1e-12);
        assert_relative_eq!(y[3], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn lim_two_nodes() {
        let g = path(2);
        let y = linear_in_means(&g, &p(0.0, 0.5, 0.0, 1.0), &[0.0, 0.0], &[1, 0]).unwrap();
        assert_relative_eq!(y[0], 4.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(y[1], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn lim_constant_fixed_point() {
        let g = path(5);
        let y = linear_in_means(&g, &p(1.0, 0.6, 0.0, 3.0), &[0.0; 5], &[0; 5]).unwrap();
        for v in y {
            assert_relative_eq!(v, 2.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn lim_iterative_matches_direct() {
        let n = 400;
        let (g, _) = crate::netgen::rgg(n, 6.0, crate::netgen::RadiusRule::Sqrt, 4).unwrap();
        let eps = draw_epsilon(n, EpsilonMode::Normal, None, 1, 0).unwrap();
        let d: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
        let par = p(-1.0, 0.8, 1.0, 1.0);
        let y = linear_in_means(&g, &par, &eps, &d).unwrap();
        // dense oracle on the same system
        let mut m = DMatrix::<f64>::identity(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for i in 0..n {
            let nb = g.neighbors(i);
            let k = nb.len() as f64;
            let frac = if nb.is_empty() { 0.0 } else { nb.iter().map(|&j| d[j] as f64).sum::<f64>() / k };
            rhs[i] = par.alpha + par.delta * frac + par.gamma * d[i] as f64 + eps[i];
            for &j in nb {
                m[(i, j)] -= par.beta / k;
            }
        }
        let dense = m.lu().solve(&rhs).unwrap();
        for i in 0..n {
            assert!((y[i] - dense[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn contagion_without_peers_is_one_pass() {
        let g = path(3);
        let y = complex_contagion(&g, &p(-0.5, 0.0, 0.0, 1.0), &[0.0; 3], &[1, 0, 1], None).unwrap();
        assert_eq!(y, vec![1, 0, 1]);
    }

    #[test]
    fn contagion_star_cascade() {
        let g = Graph::from_edges(4, &[(0, 1), (0, 2), (0, 3)], false).unwrap().0;
        let par = p(-1.0, 1.5, 1.0, 1.0);
        // leaves: -1 + 0 + 0 + 1 = 0, not > 0; center: -1 + 1 = 0 at start
        let y = complex_contagion(&g, &par, &[0.0; 4], &[0, 1, 1, 1], None).unwrap();
        assert_eq!(y, vec![0, 0, 0, 0]);
        // a small positive shock tips the leaves, then the center follows
        let y = complex_contagion(&g, &par, &[0.01; 4], &[0, 1, 1, 1], None).unwrap();
        assert_eq!(y, vec![1, 1, 1, 1]);
    }

    #[test]
    fn contagion_unreachable_thresholds() {
        let g = path(4);
        let y = complex_contagion(&g, &p(-1.0, 1.5, 1.0, 1.0), &[-10.0; 4], &[0; 4], None).unwrap();
        assert_eq!(y, vec![0; 4]);
    }

    #[test]
    fn rho_examples() {
        let g = path(3);
        // nobody can flip
        let par = p(-10.0, 1.0, 0.0, 0.0);
        assert_eq!(contagion_rho(&g, &par, &[0.0; 3], 1, 5).unwrap(), 0.0);
        // directed cycle
        let rho = matrix_power_rho(4, |i| vec![(i + 1) % 4], 1, 8);
        assert_relative_eq!(rho, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn no_interference_has_zero_delta() {
        let g = path(4);
        let m = OutcomeModel::OwnTreatment { base: vec![0.0; 4], effect: vec![1.0; 4] };
        assert_eq!(ani_delta_profile(&m, &g, 1, 3, None).unwrap(), vec![0.0; 4]);
        let big = OutcomeModel::OwnTreatment { base: vec![0.0; 17], effect: vec![1.0; 17] };
        assert!(matches!(ani_delta_profile(&big, &Graph::empty(17), 0, 1, None), Err(Error::Capacity(_))));
    }

    #[test]
    fn model_strings() {
        let m: ModelSpec = "lim:-1,0.8,1,1".parse().unwrap();
        assert_eq!(m.params(), p(-1.0, 0.8, 1.0, 1.0));
        assert_eq!(m.to_string(), "lim:-1,0.8,1,1");
        assert!("lim:0,1.2,0,0".parse::<ModelSpec>().is_err());
        assert!("contagion:0,-1,0,0".parse::<ModelSpec>().is_err());
        assert!("lim:1,2".parse::<ModelSpec>().is_err());
    }

    #[test]
    fn homophily_needs_positions() {
        assert!(draw_epsilon(3, EpsilonMode::Homophily, None, 0, 0).is_err());
        let pl = RggPlacement { positions: vec![[0.5, 0.0], [1.0, 0.0]], radius: 0.1 };
        let a = draw_epsilon(2, EpsilonMode::Homophily, Some(&pl), 3, 0).unwrap();
        let b = draw_epsilon(2, EpsilonMode::Normal, None, 3, 0).unwrap();
        assert_relative_eq!(a[0], b[0]);
        assert_relative_eq!(a[1], b[1] + 0.5);
    }
}
