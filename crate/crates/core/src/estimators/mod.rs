//! IPW point estimates, network HAC and AS variance estimators, the
//! bandwidth rule, and the exact enumeration oracle.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{Design, PropensityTable};
use crate::error::{Error, Result};
use crate::exposure::ExposureValue;
use crate::graph::{Bfs, Graph, GraphSummary, Links};

pub mod oracle;

pub use oracle::{exact_estimands, ExactEstimands, OracleOptions};

/// Units entering the estimator with their outcomes and exposures.
#[derive(Debug, Clone)]
pub struct Sample<'a> {
    pub units: Vec<usize>,
    pub outcomes: Vec<f64>,
    pub exposures: Vec<ExposureValue>,
    pub propensity: &'a PropensityTable,
}

impl<'a> Sample<'a> {
    /// Picks `units` out of network-wide outcome and exposure vectors.
    pub fn new(units: Vec<usize>, outcomes: &[f64], exposures: &[ExposureValue], propensity: &'a PropensityTable) -> Self {
        let y = units.iter().map(|&i| outcomes[i]).collect();
        let t = units.iter().map(|&i| exposures[i]).collect();
        Sample { units, outcomes: y, exposures: t, propensity }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

/// Which units are analyzed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleRule {
    All,
    /// Units with at least one exposure-relevant neighbor that can be
    /// treated.
    #[default]
    HasEligibleNeighbor,
}

impl std::str::FromStr for SampleRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(SampleRule::All),
            "has-eligible-neighbor" => Ok(SampleRule::HasEligibleNeighbor),
            other => Err(Error::input(format!("unknown sample rule `{other}` (all, has-eligible-neighbor)"))),
        }
    }
}

impl SampleRule {
    pub fn select(self, design: &Design, links: Links<'_>) -> Vec<usize> {
        match self {
            SampleRule::All => (0..design.n()).collect(),
            SampleRule::HasEligibleNeighbor => (0..design.n()).filter(|&i| design.has_eligible_neighbor(i, links)).collect(),
        }
    }
}

/// IPW point estimates and the per-unit scores `Z_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub mu_t: f64,
    pub mu_t0: f64,
    pub tau: f64,
    pub n: usize,
    pub n_eff_t: usize,
    pub n_eff_t0: usize,
    #[serde(skip)]
    pub z: Vec<f64>,
    /// `1_i(t) Y_i / pi_i(t)`, the single-arm scores.
    #[serde(skip)]
    pub w_t: Vec<f64>,
    #[serde(skip)]
    pub w_t0: Vec<f64>,
}

/// Horvitz-Thompson estimates of `mu(t)`, `mu(t0)` and their contrast.
pub fn ipw_point(sample: &Sample<'_>, t: ExposureValue, t0: ExposureValue) -> Result<PointEstimate> {
    let n = sample.len();
    if n == 0 {
        return Err(Error::input("empty sample"));
    }
    let pi = sample.propensity;
    for &i in &sample.units {
        for e in [t, t0] {
            let p = pi.pi(i, e);
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Overlap { unit: i, exposure: e, pi: p });
            }
        }
    }
    let mut w_t = vec![0.0; n];
    let mut w_t0 = vec![0.0; n];
    let (mut n_eff_t, mut n_eff_t0) = (0, 0);
    for k in 0..n {
        let (i, y, e) = (sample.units[k], sample.outcomes[k], sample.exposures[k]);
        if e == t {
            w_t[k] = y / pi.pi(i, t);
            n_eff_t += 1;
        }
        if e == t0 {
            w_t0[k] = y / pi.pi(i, t0);
            n_eff_t0 += 1;
        }
    }
    let z: Vec<f64> = w_t.iter().zip(&w_t0).map(|(a, b)| a - b).collect();
    let mu_t = w_t.iter().sum::<f64>() / n as f64;
    let mu_t0 = w_t0.iter().sum::<f64>() / n as f64;
    Ok(PointEstimate { mu_t, mu_t0, tau: mu_t - mu_t0, n, n_eff_t, n_eff_t0, z, w_t, w_t0 })
}

/// Neighborhood growth regime used by the bandwidth rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Exponential,
    Polynomial,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub b: usize,
    pub regime: Regime,
    pub b_tilde: f64,
    /// `2 ln n / ln avg_degree`.
    pub threshold: f64,
    pub literal: bool,
    pub warning: Option<String>,
}

/// Data-driven bandwidth from the APL, network size, average degree and
/// exposure radius `k`.
///
/// Small APL (at most `2 ln n / ln avg_degree`) indicates exponential
/// neighborhood growth and gives `APL / 2`; otherwise `APL^(1/3)`. The
/// result is `max(b_tilde, 2k)` rounded half-up. With `literal` the
/// comparison is flipped to follow the formula as printed in the source.
pub fn bandwidth_rule(apl: f64, n: usize, avg_degree: f64, k: usize, literal: bool) -> Bandwidth {
    let floor = 2 * k;
    if n < 2 || !(avg_degree > 1.0) {
        return Bandwidth {
            b: floor.max(1),
            regime: Regime::Degenerate,
            b_tilde: f64::NAN,
            threshold: f64::NAN,
            literal,
            warning: Some(format!(
                "average degree {avg_degree} <= 1 or n < 2: regime test undefined, using max(1, 2K)"
            )),
        };
    }
    let threshold = 2.0 * (n as f64).ln() / avg_degree.ln();
    let small = apl <= threshold;
    let exponential = if literal { !small } else { small };
    let (regime, b_tilde) =
        if exponential { (Regime::Exponential, apl / 2.0) } else { (Regime::Polynomial, apl.cbrt()) };
    let b = (b_tilde.max(floor as f64) + 0.5).floor() as usize;
    Bandwidth { b, regime, b_tilde, threshold, literal, warning: None }
}

pub fn bandwidth_from_summary(s: &GraphSummary, k: usize, literal: bool) -> Bandwidth {
    bandwidth_rule(s.apl, s.n, s.avg_degree, k, literal)
}

/// HAC variance and whether it came out nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HacVariance {
    pub sigma2: f64,
    pub psd: bool,
}

/// `n^-1 sum_i sum_j (x_i - c)(x_j - c) 1{dist(i,j) <= b}` for every
/// `b = 0..=max_b`, with distances on the full graph and both units in the
/// sample.
pub fn hac_profile(g: &Graph, units: &[usize], scores: &[f64], center: f64, max_b: usize) -> Vec<f64> {
    let n = units.len();
    if n == 0 {
        return vec![0.0; max_b + 1];
    }
    let mut slot = vec![usize::MAX; g.n()];
    for (k, &u) in units.iter().enumerate() {
        slot[u] = k;
    }
    let dev: Vec<f64> = scores.iter().map(|z| z - center).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map_init(
            || Bfs::new(g.n()),
            |bfs, k| {
                let mut by_dist = vec![0.0; max_b + 1];
                bfs.run(g, units[k], max_b, |node, dist| {
                    let s = slot[node];
                    if s != usize::MAX {
                        by_dist[dist] += dev[s];
                    }
                });
                by_dist.iter_mut().for_each(|v| *v *= dev[k]);
                by_dist
            },
        )
        .collect();
    let mut out = vec![0.0; max_b + 1];
    for row in rows {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
    let mut acc = 0.0;
    for v in out.iter_mut() {
        acc += *v;
        *v = acc / n as f64;
    }
    out
}

pub fn hac_variance(g: &Graph, units: &[usize], scores: &[f64], center: f64, b: usize) -> HacVariance {
    let sigma2 = hac_profile(g, units, scores, center, b)[b];
    HacVariance { sigma2, psd: sigma2 >= 0.0 }
}

/// AS variance estimate of `Var(sqrt(n) tau_hat)`, with the conservative
/// surrogate terms for pairs whose joint propensity is zero.
pub fn as_variance(sample: &Sample<'_>, t: ExposureValue, t0: ExposureValue) -> Result<f64> {
    let pi = sample.propensity;
    let n = sample.len();
    let mut slot = BTreeMap::new();
    for (k, &u) in sample.units.iter().enumerate() {
        if !pi.covers_pair(u) {
            return Err(Error::input(format!("missing joint propensities for unit {u}")));
        }
        slot.insert(u, k);
    }
    let ind = |k: usize, e: ExposureValue| (sample.exposures[k] == e) as u8 as f64;
    let y = &sample.outcomes;
    // weighted outcome 1_i(e) Y_i / pi_i(e)
    let hw = |k: usize, e: ExposureValue| ind(k, e) * y[k] / pi.pi(sample.units[k], e);
    let half_sq = |k: usize, e: ExposureValue| ind(k, e) * y[k] * y[k] / (2.0 * pi.pi(sample.units[k], e));

    let mut total = 0.0;
    for k in 0..n {
        let i = sample.units[k];
        for e in [t, t0] {
            let p = pi.pi(i, e);
            total += ind(k, e) * y[k] * y[k] / p * (1.0 - p) / p;
        }
        // diagonal of the covariance term: pi_ii(t, t0) = 0
        if t != t0 {
            total += 2.0 * (half_sq(k, t) + half_sq(k, t0));
        }
    }
    let pairs = pi.dependent_pairs().ok_or_else(|| Error::input("joint propensities were not computed"))?;
    for (i, j) in pairs {
        let (Some(&a), Some(&b)) = (slot.get(&i), slot.get(&j)) else {
            continue;
        };
        for (e1, e2, sign) in [(t, t, 1.0), (t0, t0, 1.0), (t, t0, -2.0)] {
            let pij = pi.pair(i, j, e1, e2)?;
            let (pi_i, pi_j) = (pi.pi(i, e1), pi.pi(j, e2));
            if pij != 0.0 {
                total += sign * hw(a, e1) * hw(b, e2) * pi_i * pi_j / pij * (pij - pi_i * pi_j) / (pi_i * pi_j);
            } else {
                let weight = if e1 == e2 { 1.0 } else { 2.0 };
                total += weight * (half_sq(a, e1) + half_sq(b, e2));
            }
        }
    }
    Ok(total / n as f64)
}

/// Variance estimators the report can include.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceKind {
    Hac,
    As,
    Naive,
}

impl std::str::FromStr for VarianceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "hac" | "hac-auto" => Ok(VarianceKind::Hac),
            "as" => Ok(VarianceKind::As),
            "naive" => Ok(VarianceKind::Naive),
            other => Err(Error::input(format!("unknown variance estimator `{other}` (hac, as, naive)"))),
        }
    }
}

impl VarianceKind {
    pub fn name(self) -> &'static str {
        match self {
            VarianceKind::Hac => "hac",
            VarianceKind::As => "as",
            VarianceKind::Naive => "naive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEntry {
    pub sigma2: f64,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub psd: bool,
}

impl VarianceEntry {
    pub fn new(sigma2: f64, n: usize, estimate: f64) -> Self {
        if sigma2 >= 0.0 {
            let se = (sigma2 / n as f64).sqrt();
            VarianceEntry { sigma2, se: Some(se), ci_lo: Some(estimate - 1.96 * se), ci_hi: Some(estimate + 1.96 * se), psd: true }
        } else {
            VarianceEntry { sigma2, se: None, ci_lo: None, ci_hi: None, psd: false }
        }
    }

    pub fn covers(&self, target: f64) -> Option<bool> {
        Some(self.ci_lo? <= target && target <= self.ci_hi?)
    }
}

/// Bandwidth selection for the HAC estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthChoice {
    Auto { literal: bool },
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub mu_t: f64,
    pub mu_t0: f64,
    pub tau: f64,
    pub n: usize,
    pub n_eff_t: usize,
    pub n_eff_t0: usize,
    pub bandwidth: Option<usize>,
    pub regime: Option<Regime>,
    pub variance: BTreeMap<String, VarianceEntry>,
    /// Single-arm HAC standard errors of `mu_hat(t)` and `mu_hat(t0)`.
    pub mu_se: Option<(f64, f64)>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub z: Vec<f64>,
}

/// Point estimate plus the requested variance estimators.
pub fn estimate(
    g: &Graph,
    sample: &Sample<'_>,
    t: ExposureValue,
    t0: ExposureValue,
    k: usize,
    bandwidth: BandwidthChoice,
    kinds: &[VarianceKind],
    summary: Option<&GraphSummary>,
) -> Result<EstimateReport> {
    let point = ipw_point(sample, t, t0)?;
    let mut warnings = sample.propensity.warnings.clone();
    let mut variance = BTreeMap::new();
    let (mut bw, mut regime, mut mu_se) = (None, None, None);
    for &kind in kinds {
        let sigma2 = match kind {
            VarianceKind::Naive => hac_variance(g, &sample.units, &point.z, point.tau, 0).sigma2,
            VarianceKind::As => as_variance(sample, t, t0)?,
            VarianceKind::Hac => {
                let b = match bandwidth {
                    BandwidthChoice::Fixed(b) => b,
                    BandwidthChoice::Auto { literal } => {
                        let owned;
                        let s = match summary {
                            Some(s) => s,
                            None => {
                                owned = g.summary();
                                &owned
                            }
                        };
                        let rule = bandwidth_from_summary(s, k, literal);
                        regime = Some(rule.regime);
                        warnings.extend(rule.warning);
                        rule.b
                    }
                };
                bw = Some(b);
                let se_of = |w: &[f64], mu: f64| {
                    let v = hac_variance(g, &sample.units, w, mu, b).sigma2;
                    if v >= 0.0 { (v / point.n as f64).sqrt() } else { f64::NAN }
                };
                mu_se = Some((se_of(&point.w_t, point.mu_t), se_of(&point.w_t0, point.mu_t0)));
                let h = hac_variance(g, &sample.units, &point.z, point.tau, b);
                if !h.psd {
                    warnings.push(format!("HAC variance is negative ({:.6e}) at bandwidth {b}", h.sigma2));
                }
                h.sigma2
            }
        };
        variance.insert(kind.name().to_string(), VarianceEntry::new(sigma2, point.n, point.tau));
    }
    Ok(EstimateReport {
        mu_t: point.mu_t,
        mu_t0: point.mu_t0,
        tau: point.tau,
        n: point.n,
        n_eff_t: point.n_eff_t,
        n_eff_t0: point.n_eff_t0,
        bandwidth: bw,
        regime,
        variance,
        mu_se,
        warnings,
        z: point.z,
    })
}
