//! Monte Carlo replication engine for coverage, consistency and bias
//! experiments on simulated networks.

use std::collections::HashMap;
use std::path::PathBuf;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{joint_feasible, propensity, Block, Design, DesignKind, PropensityRequest};
use crate::error::{Error, Result};
use crate::estimators::{
    bandwidth_from_summary, estimate, hac_profile, BandwidthChoice, Sample, SampleRule, VarianceKind,
};
use crate::exposure::{ExposureSpec, ExposureValue};
use crate::graph::{Graph, Links};
use crate::netgen::{self, RadiusRule, RggPlacement};
use crate::outcomes::{draw_epsilon, EpsilonMode, ModelSpec, OutcomeModel};
use crate::seeds::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkModel {
    Configuration,
    Rgg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub model: NetworkModel,
    /// Number of bundled calibration schools to pool (1, 2 or 4).
    #[serde(default)]
    pub schools: Option<usize>,
    /// Degree sequence file used instead of the bundled calibration.
    #[serde(default)]
    pub degrees_file: Option<PathBuf>,
    /// Expected degree of the geometric graph; defaults to the mean degree.
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub radius_rule: RadiusRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EffectDesign {
    /// `Y(1) = beta_i + Y(0)`.
    Independent,
    /// `Y(1) = beta_i + mean of neighbors' beta + Y(0)`.
    Autocorrelated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeConfig {
    /// `lim:...` or `contagion:...`; ignored in bias mode.
    #[serde(default)]
    pub model: Option<ModelSpec>,
    /// Shock mode; defaults to homophily on geometric graphs, normal otherwise.
    #[serde(default)]
    pub epsilon: Option<EpsilonMode>,
    /// Correctly specified exposure-table outcomes with exact bias terms.
    #[serde(default)]
    pub bias: Option<EffectDesign>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EligibleConfig {
    PerSchool(usize),
    Fraction(f64),
    Units(Vec<usize>),
    All,
}

impl Default for EligibleConfig {
    fn default() -> Self {
        EligibleConfig::PerSchool(netgen::CALIBRATION_ELIGIBLE_PER_SCHOOL)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DesignConfig {
    Bernoulli {
        p: f64,
        #[serde(default)]
        eligible: EligibleConfig,
    },
    /// One block per school over its eligible units, treating
    /// `floor(treated_fraction * size)`.
    Blocks {
        treated_fraction: f64,
        #[serde(default)]
        eligible: EligibleConfig,
    },
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig::Bernoulli { p: 0.5, eligible: EligibleConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Redraw {
    pub graph: bool,
    pub epsilon: bool,
    pub assignment: bool,
}

impl Default for Redraw {
    fn default() -> Self {
        Redraw { graph: true, epsilon: true, assignment: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthConfig {
    Fixed(usize),
    Named(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AutoTag {
    Auto,
}

impl Default for BandwidthConfig {
    fn default() -> Self {
        BandwidthConfig::Named(AutoTag::Auto)
    }
}

fn default_exposure() -> ExposureSpec {
    ExposureSpec::AnyTreatedNeighbor
}
fn default_t() -> ExposureValue {
    1
}
fn default_estimators() -> Vec<VarianceKind> {
    vec![VarianceKind::Hac, VarianceKind::Naive]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub network: NetworkConfig,
    pub outcome: OutcomeConfig,
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default = "default_exposure")]
    pub exposure: ExposureSpec,
    #[serde(default = "default_t")]
    pub t: ExposureValue,
    #[serde(default)]
    pub t0: ExposureValue,
    pub reps: usize,
    pub seed: u64,
    #[serde(default)]
    pub redraw: Redraw,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<VarianceKind>,
    /// Independent replications used for the coverage target and oracle SE.
    #[serde(default)]
    pub oracle_reps: usize,
    #[serde(default)]
    pub sample: SampleRule,
    #[serde(default)]
    pub bandwidth: BandwidthConfig,
    #[serde(default)]
    pub literal_bandwidth_rule: bool,
    /// Keep every replication's estimate in the report.
    #[serde(default)]
    pub keep_draws: bool,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::input("reps must be at least 1"));
        }
        if self.t == self.t0 || !self.exposure.in_support(self.t) || !self.exposure.in_support(self.t0) {
            return Err(Error::input("contrast must be two distinct values in the exposure support"));
        }
        if self.outcome.bias.is_none() {
            let m = self.outcome.model.ok_or_else(|| Error::input("outcome.model is required outside bias mode"))?;
            m.validate()?;
        }
        if self.network.schools.is_some() == self.network.degrees_file.is_some() {
            return Err(Error::input("network needs exactly one of `schools` or `degrees_file`"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub name: String,
    pub mean_se: f64,
    pub coverage: f64,
    pub coverage_mcse: f64,
    /// Replications in which this estimator returned a negative variance.
    pub non_psd: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub design: EffectDesign,
    pub mean_r_n: f64,
    pub mean_r_n_as: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub network_size: usize,
    pub reps: usize,
    pub failed: usize,
    pub failures: Vec<String>,
    pub mean_tau: f64,
    /// Coverage target and how it was obtained.
    pub target: f64,
    pub target_source: String,
    pub oracle_se: f64,
    pub oracle_coverage: f64,
    pub coverage_mcse: f64,
    pub rmse: f64,
    pub estimators: Vec<EstimatorSummary>,
    pub mean_n: f64,
    pub mean_n_eff_t: f64,
    pub mean_n_eff_t0: f64,
    pub mean_avg_degree: f64,
    pub mean_apl: Option<f64>,
    pub mean_bandwidth: Option<f64>,
    pub bias: Option<BiasSummary>,
    pub draws: Option<Vec<f64>>,
}

struct Network {
    g: Graph,
    placement: Option<RggPlacement>,
}

/// Frozen per-experiment inputs shared by all replications.
struct Setup {
    degrees: Vec<usize>,
    design: Design,
    epsilon_mode: EpsilonMode,
}

fn school_ranges(cfg: &NetworkConfig, n: usize) -> Vec<(usize, usize)> {
    match cfg.schools {
        Some(k) => {
            let mut start = 0;
            netgen::CALIBRATION_SCHOOL_SIZES
                .iter()
                .take(k)
                .map(|&s| {
                    start += s;
                    (start - s, start)
                })
                .collect()
        }
        None => vec![(0, n)],
    }
}

fn eligible_units(spec: &EligibleConfig, ranges: &[(usize, usize)], n: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut rng = seeds::rng(seed, stream::ELIGIBLE, 0);
    let pick = |rng: &mut rand_chacha::ChaCha8Rng, (lo, hi): (usize, usize), k: usize| -> Vec<usize> {
        let mut v: Vec<usize> = index::sample(rng, hi - lo, k.min(hi - lo)).into_iter().map(|i| lo + i).collect();
        v.sort_unstable();
        v
    };
    Ok(match spec {
        EligibleConfig::PerSchool(k) => ranges.iter().map(|&r| pick(&mut rng, r, *k)).collect(),
        EligibleConfig::Fraction(f) => {
            if !(0.0..=1.0).contains(f) {
                return Err(Error::input("eligible fraction must be in [0,1]"));
            }
            ranges.iter().map(|&(lo, hi)| pick(&mut rng, (lo, hi), ((hi - lo) as f64 * f).round() as usize)).collect()
        }
        EligibleConfig::Units(u) => {
            if let Some(&bad) = u.iter().find(|&&i| i >= n) {
                return Err(Error::input(format!("eligible unit {bad} >= n={n}")));
            }
            vec![u.clone()]
        }
        EligibleConfig::All => ranges.iter().map(|&(lo, hi)| (lo..hi).collect()).collect(),
    })
}

fn load_degrees(cfg: &NetworkConfig) -> Result<Vec<usize>> {
    match (&cfg.schools, &cfg.degrees_file) {
        (Some(k), None) => {
            let text = netgen::bundled_calibration(*k)
                .ok_or_else(|| Error::input(format!("no bundled calibration for {k} schools (use 1, 2 or 4)")))?;
            netgen::read_degrees(text.as_bytes())
        }
        (None, Some(path)) => netgen::read_degrees(std::io::BufReader::new(std::fs::File::open(path)?)),
        _ => Err(Error::input("network needs exactly one of `schools` or `degrees_file`")),
    }
}

impl Setup {
    fn new(cfg: &McConfig) -> Result<Self> {
        cfg.validate()?;
        let degrees = load_degrees(&cfg.network)?;
        let n = degrees.len();
        if n == 0 {
            return Err(Error::input("empty degree sequence"));
        }
        let ranges = school_ranges(&cfg.network, n);
        if ranges.last().map(|r| r.1) != Some(n) {
            return Err(Error::input("calibration sizes do not match the degree sequence"));
        }
        let design = match &cfg.design {
            DesignConfig::Bernoulli { p, eligible } => {
                let el: Vec<usize> = eligible_units(eligible, &ranges, n, cfg.seed)?.concat();
                Design::bernoulli(n, &el, *p)?
            }
            DesignConfig::Blocks { treated_fraction, eligible } => {
                let blocks = eligible_units(eligible, &ranges, n, cfg.seed)?
                    .into_iter()
                    .filter(|u| !u.is_empty())
                    .map(|units| {
                        let treated = (units.len() as f64 * treated_fraction).floor() as usize;
                        Block { units, treated }
                    })
                    .collect();
                Design::blocks(n, blocks)?
            }
        };
        let epsilon_mode = cfg.outcome.epsilon.unwrap_or(match cfg.network.model {
            NetworkModel::Rgg => EpsilonMode::Homophily,
            NetworkModel::Configuration => EpsilonMode::Normal,
        });
        Ok(Setup { degrees, design, epsilon_mode })
    }

    fn network(&self, cfg: &McConfig, idx: u64) -> Result<Network> {
        let seed = seeds::derive(cfg.seed, stream::GRAPH, idx);
        match cfg.network.model {
            NetworkModel::Configuration => {
                Ok(Network { g: netgen::configuration_model(&self.degrees, seed)?.0, placement: None })
            }
            NetworkModel::Rgg => {
                let n = self.degrees.len();
                let kappa =
                    cfg.network.kappa.unwrap_or_else(|| self.degrees.iter().sum::<usize>() as f64 / n as f64);
                let (g, pl) = netgen::rgg(n, kappa, cfg.network.radius_rule, seed)?;
                Ok(Network { g, placement: Some(pl) })
            }
        }
    }
}

/// What one replication produced.
#[derive(Debug, Clone, Default)]
struct Rep {
    tau: f64,
    n: usize,
    n_eff_t: usize,
    n_eff_t0: usize,
    avg_degree: f64,
    apl: Option<f64>,
    bandwidth: Option<usize>,
    /// (estimator, se, ci covers target?) filled after the target is known.
    intervals: Vec<(VarianceKind, Option<(f64, f64)>)>,
    r_n: Option<(f64, f64)>,
}

fn run_rep(cfg: &McConfig, setup: &Setup, fixed: Option<&Network>, r: u64, with_estimators: bool, stream_tag: u64) -> Result<Rep> {
    // oracle passes use a disjoint index range so they never reuse main draws
    let idx = |redraw: bool| if redraw { seeds::derive(stream_tag, r, 0) } else { 0 };
    let owned;
    let net = match fixed {
        Some(n) => n,
        None => {
            owned = setup.network(cfg, idx(cfg.redraw.graph))?;
            &owned
        }
    };
    let g = &net.g;
    let n = g.n();
    let links = Links::Undirected(g);
    let eps = draw_epsilon(n, setup.epsilon_mode, net.placement.as_ref(), cfg.seed, idx(cfg.redraw.epsilon))?;
    let d = setup.design.sample_with(&mut seeds::rng(cfg.seed, stream::ASSIGNMENT, idx(cfg.redraw.assignment)));
    let exposures = cfg.exposure.compute(&d, links);
    let units = cfg.sample.select(&setup.design, links);
    let table = propensity(
        &setup.design,
        &cfg.exposure,
        links,
        PropensityRequest::MonteCarloFallback { reps: 10_000, seed: cfg.seed },
    )?;

    let (y, bias_terms) = match cfg.outcome.bias {
        None => (cfg.outcome.model.expect("validated").with_epsilon(eps).evaluate(g, &d)?, None),
        Some(kind) => {
            let mut rng = seeds::rng(cfg.seed, stream::EFFECTS, idx(cfg.redraw.epsilon));
            let beta: Vec<f64> = (0..n).map(|_| 1.0 + rng.sample::<f64, _>(StandardNormal)).collect();
            let nbr_mean = |v: &[f64], i: usize| {
                let nb = g.neighbors(i);
                if nb.is_empty() { 0.0 } else { nb.iter().map(|&j| v[j]).sum::<f64>() / nb.len() as f64 }
            };
            let table_rows: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    let y0 = eps[i] + nbr_mean(&eps, i);
                    let effect = match kind {
                        EffectDesign::Independent => beta[i],
                        EffectDesign::Autocorrelated => beta[i] + nbr_mean(&beta, i),
                    };
                    let mut row = vec![y0; cfg.exposure.support_size() as usize];
                    row[cfg.t as usize] = y0 + effect;
                    row
                })
                .collect();
            let terms = bias_terms(cfg, setup, g, &units, &table_rows)?;
            let model = OutcomeModel::ExposureTable { exposure: cfg.exposure.clone(), table: table_rows };
            (model.evaluate(g, &d)?, Some(terms))
        }
    };

    let sample = Sample::new(units, &y, &exposures, &table);
    let mut rep = Rep { r_n: bias_terms, avg_degree: g.avg_degree(), ..Rep::default() };
    let kinds: &[VarianceKind] = if with_estimators { &cfg.estimators } else { &[] };
    let needs_summary = kinds.contains(&VarianceKind::Hac) && matches!(cfg.bandwidth, BandwidthConfig::Named(_));
    let summary = needs_summary.then(|| g.summary());
    let choice = match cfg.bandwidth {
        BandwidthConfig::Fixed(b) => BandwidthChoice::Fixed(b),
        BandwidthConfig::Named(AutoTag::Auto) => BandwidthChoice::Auto { literal: cfg.literal_bandwidth_rule },
    };
    let report = estimate(g, &sample, cfg.t, cfg.t0, cfg.exposure.radius(), choice, kinds, summary.as_ref())?;
    if report.n_eff_t == 0 || report.n_eff_t0 == 0 {
        return Err(Error::Numeric("an exposure arm is empty".into()));
    }
    rep.tau = report.tau;
    rep.n = report.n;
    rep.n_eff_t = report.n_eff_t;
    rep.n_eff_t0 = report.n_eff_t0;
    rep.apl = summary.as_ref().map(|s| s.apl);
    if let Some(s) = &summary {
        rep.bandwidth = Some(bandwidth_from_summary(s, cfg.exposure.radius(), cfg.literal_bandwidth_rule).b);
    } else {
        rep.bandwidth = report.bandwidth;
    }
    for &k in kinds {
        let v = &report.variance[k.name()];
        rep.intervals.push((k, v.ci_lo.zip(v.ci_hi)));
    }
    Ok(rep)
}

/// Exact `R_n` (bandwidth `2K`) and `R_{n,AS}` for exposure-table outcomes.
fn bias_terms(cfg: &McConfig, setup: &Setup, g: &Graph, units: &[usize], table: &[Vec<f64>]) -> Result<(f64, f64)> {
    if matches!(setup.design.kind(), DesignKind::Blocks { .. }) {
        // fixed block sizes can make pairs with disjoint neighborhoods
        // jointly infeasible too, which the pair scan below does not track
        return Err(Error::UnsupportedExposure("bias mode supports Bernoulli designs only".into()));
    }
    let (t, t0) = (cfg.t, cfg.t0);
    let links = Links::Undirected(g);
    let m = units.len();
    if m == 0 {
        return Err(Error::Numeric("empty sample".into()));
    }
    let tau_i: Vec<f64> = units.iter().map(|&i| table[i][t as usize] - table[i][t0 as usize]).collect();
    let tau = tau_i.iter().sum::<f64>() / m as f64;
    let r_n = hac_profile(g, units, &tau_i, tau, 2 * cfg.exposure.radius())[2 * cfg.exposure.radius()];

    let yt = |i: usize, e: ExposureValue| table[i][e as usize];
    let mut total: f64 = units.iter().map(|&i| (yt(i, t) - yt(i, t0)).powi(2)).sum();
    // Joint exposure can only be impossible for pairs sharing an
    // exposure-relevant unit; other pairs depend on disjoint treatments.
    let in_sample: std::collections::HashSet<usize> = units.iter().copied().collect();
    let mut holders: HashMap<usize, Vec<usize>> = HashMap::new();
    for &i in units {
        if cfg.exposure.radius() == 0 {
            holders.entry(i).or_default().push(i);
        }
        for &k in links.of(i) {
            holders.entry(k).or_default().push(i);
        }
    }
    let mut seen = std::collections::HashSet::new();
    for list in holders.values() {
        for &i in list {
            for &j in list {
                if i == j || !seen.insert((i, j)) || !in_sample.contains(&j) {
                    continue;
                }
                let zero = |e1, e2| -> Result<bool> {
                    joint_feasible(&setup.design, &cfg.exposure, links, i, e1, j, e2)
                        .map(|ok| !ok)
                        .ok_or_else(|| Error::UnsupportedExposure("bias mode needs analytic joint feasibility".into()))
                };
                let mut v = 0.0;
                if zero(t, t)? {
                    v += (yt(i, t) + yt(j, t)).powi(2);
                }
                if zero(t, t0)? {
                    v += 2.0 * (yt(i, t) - yt(j, t0)).powi(2);
                }
                if zero(t0, t0)? {
                    v += (yt(i, t0) + yt(j, t0)).powi(2);
                }
                total += 0.5 * v;
            }
        }
    }
    Ok((r_n, total / m as f64))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if c == 0 { f64::NAN } else { s / c as f64 }
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v.iter().copied());
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len().saturating_sub(1)).max(1) as f64).sqrt()
}

fn keep(results: Vec<Result<Rep>>, failures: &mut Vec<String>) -> Vec<Rep> {
    let mut out = Vec::with_capacity(results.len());
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(rep) => out.push(rep),
            Err(e) => failures.push(format!("replication {r}: {e}")),
        }
    }
    out
}

fn run_pass(cfg: &McConfig, setup: &Setup, fixed: Option<&Network>, reps: usize, with_estimators: bool, tag: u64) -> Vec<Result<Rep>> {
    (0..reps as u64).into_par_iter().map(|r| run_rep(cfg, setup, fixed, r, with_estimators, tag)).collect()
}

/// Runs the experiment described by `cfg`.
pub fn run_mc(cfg: &McConfig) -> Result<McReport> {
    let setup = Setup::new(cfg)?;
    let fixed = if cfg.redraw.graph { None } else { Some(setup.network(cfg, 0)?) };
    let main_tag = seeds::derive(cfg.seed, stream::ASSIGNMENT, u64::MAX);
    let oracle_tag = seeds::derive(cfg.seed, stream::ORACLE, u64::MAX);

    let mut failures = Vec::new();
    let main = keep(run_pass(cfg, &setup, fixed.as_ref(), cfg.reps, true, main_tag), &mut failures);
    let failed = failures.len();
    let oracle = if cfg.oracle_reps > 0 {
        let o = keep(run_pass(cfg, &setup, fixed.as_ref(), cfg.oracle_reps, false, oracle_tag), &mut Vec::new());
        Some(o)
    } else {
        None
    };
    if main.is_empty() {
        return Err(Error::Numeric(format!("all {} replications failed", cfg.reps)));
    }
    let taus: Vec<f64> = main.iter().map(|r| r.tau).collect();
    let mean_tau = mean(taus.iter().copied());
    let (target, oracle_se, target_source) = match &oracle {
        Some(o) if o.len() > 1 => {
            let ot: Vec<f64> = o.iter().map(|r| r.tau).collect();
            (mean(ot.iter().copied()), sd(&ot), format!("mean of tau_hat over {} independent oracle draws", ot.len()))
        }
        _ => (mean_tau, sd(&taus), "mean of tau_hat over the replications themselves".to_string()),
    };
    let k = main.len() as f64;
    let mcse = |p: f64| (p * (1.0 - p) / k).sqrt();
    let oracle_coverage = taus.iter().filter(|&&x| (x - target).abs() <= 1.96 * oracle_se).count() as f64 / k;
    let estimators = cfg
        .estimators
        .iter()
        .map(|&kind| {
            let ints: Vec<Option<(f64, f64)>> = main
                .iter()
                .map(|r| r.intervals.iter().find(|(k2, _)| *k2 == kind).and_then(|(_, ci)| *ci))
                .collect();
            let covered = ints.iter().filter(|ci| ci.is_some_and(|(lo, hi)| lo <= target && target <= hi)).count();
            let coverage = covered as f64 / k;
            EstimatorSummary {
                name: kind.name().to_string(),
                mean_se: mean(ints.iter().flatten().map(|(lo, hi)| (hi - lo) / (2.0 * 1.96))),
                coverage,
                coverage_mcse: mcse(coverage),
                non_psd: ints.iter().filter(|c| c.is_none()).count(),
            }
        })
        .collect();
    let opt_mean = |f: &dyn Fn(&Rep) -> Option<f64>| {
        let v: Vec<f64> = main.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| mean(v.into_iter()))
    };
    let bias = cfg.outcome.bias.map(|design| BiasSummary {
        design,
        mean_r_n: mean(main.iter().filter_map(|r| r.r_n.map(|x| x.0))),
        mean_r_n_as: mean(main.iter().filter_map(|r| r.r_n.map(|x| x.1))),
    });
    failures.truncate(20);
    Ok(McReport {
        network_size: setup.degrees.len(),
        reps: cfg.reps,
        failed,
        failures,
        mean_tau,
        target,
        target_source,
        oracle_se,
        oracle_coverage,
        coverage_mcse: mcse(oracle_coverage),
        rmse: (taus.iter().map(|x| (x - target).powi(2)).sum::<f64>() / k).sqrt(),
        estimators,
        mean_n: mean(main.iter().map(|r| r.n as f64)),
        mean_n_eff_t: mean(main.iter().map(|r| r.n_eff_t as f64)),
        mean_n_eff_t0: mean(main.iter().map(|r| r.n_eff_t0 as f64)),
        mean_avg_degree: mean(main.iter().map(|r| r.avg_degree)),
        mean_apl: opt_mean(&|r| r.apl),
        mean_bandwidth: opt_mean(&|r| r.bandwidth.map(|b| b as f64)),
        bias,
        draws: cfg.keep_draws.then_some(taus),
    })
}

impl McReport {
    /// One CSV row per estimator, plus an `oracle` row.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["estimator", "mean_se", "coverage", "coverage_mcse", "mean_tau", "target", "rmse", "reps", "failed"])?;
        let f = crate::io::fmt_float;
        let common = [f(self.mean_tau), f(self.target), f(self.rmse), self.reps.to_string(), self.failed.to_string()];
        let mut rows = vec![(String::from("oracle"), self.oracle_se, self.oracle_coverage, self.coverage_mcse)];
        rows.extend(self.estimators.iter().map(|e| (e.name.clone(), e.mean_se, e.coverage, e.coverage_mcse)));
        for (name, se, cov, m) in rows {
            let mut rec = vec![name, f(se), f(cov), f(m)];
            rec.extend(common.iter().cloned());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}
