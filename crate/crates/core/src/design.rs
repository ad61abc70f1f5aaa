//! Randomization designs, assignment sampling, exhaustive support
//! enumeration, and generalized propensity scores.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exposure::{ExposureSpec, ExposureValue};
use crate::graph::Links;
use crate::seeds;

/// A block of eligible units with a fixed number of treated members.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub units: Vec<usize>,
    pub treated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DesignKind {
    /// Independent draws with per-unit probabilities; ineligible units have 0.
    Bernoulli { p: Vec<f64> },
    /// Disjoint blocks, each with a uniformly drawn subset of fixed size
    /// treated. Units outside every block are never treated.
    Blocks { blocks: Vec<Block> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    n: usize,
    kind: DesignKind,
    eligible: Vec<bool>,
    block_of: Vec<Option<usize>>,
}

/// Binary treatment vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment(pub Vec<u8>);

impl std::ops::Deref for Assignment {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        &self.0
    }
}

impl Assignment {
    pub fn treated_count(&self) -> usize {
        self.0.iter().filter(|&&v| v == 1).count()
    }
}

impl Design {
    /// Bernoulli(`p`) on the listed eligible units.
    pub fn bernoulli(n: usize, eligible: &[usize], p: f64) -> Result<Self> {
        let mut probs = vec![0.0; n];
        for &i in eligible {
            if i >= n {
                return Err(Error::input(format!("eligible unit {i} >= n={n}")));
            }
            probs[i] = p;
        }
        let mut d = Self::bernoulli_with_probs(probs)?;
        d.eligible = vec![false; n];
        eligible.iter().for_each(|&i| d.eligible[i] = true);
        Ok(d)
    }

    /// Bernoulli design with arbitrary per-unit probabilities; units with
    /// positive probability are the eligible ones.
    pub fn bernoulli_with_probs(p: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::input(format!("probability {v} for unit {i} outside [0,1]")));
        }
        let n = p.len();
        let eligible = p.iter().map(|&v| v > 0.0).collect();
        Ok(Design { n, kind: DesignKind::Bernoulli { p }, eligible, block_of: vec![None; n] })
    }

    pub fn blocks(n: usize, blocks: Vec<Block>) -> Result<Self> {
        let mut block_of = vec![None; n];
        for (b, blk) in blocks.iter().enumerate() {
            if blk.treated > blk.units.len() {
                return Err(Error::input(format!(
                    "block {b} treats {} of {} units",
                    blk.treated,
                    blk.units.len()
                )));
            }
            for &i in &blk.units {
                if i >= n {
                    return Err(Error::input(format!("block {b} contains unit {i} >= n={n}")));
                }
                if block_of[i].is_some() {
                    return Err(Error::input(format!("unit {i} appears in more than one block")));
                }
                block_of[i] = Some(b);
            }
        }
        let eligible = block_of.iter().map(Option::is_some).collect();
        Ok(Design { n, kind: DesignKind::Blocks { blocks }, eligible, block_of })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> &DesignKind {
        &self.kind
    }

    pub fn is_eligible(&self, i: usize) -> bool {
        self.eligible[i]
    }

    pub fn eligible_units(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.eligible[i]).collect()
    }

    pub fn block_of(&self, i: usize) -> Option<usize> {
        self.block_of[i]
    }

    /// `P(D_i = 1)`.
    pub fn marginal(&self, i: usize) -> f64 {
        match &self.kind {
            DesignKind::Bernoulli { p } => p[i],
            DesignKind::Blocks { blocks } => self.block_of[i]
                .map(|b| blocks[b].treated as f64 / blocks[b].units.len() as f64)
                .unwrap_or(0.0),
        }
    }

    /// Whether some exposure-relevant neighbor can be treated.
    pub fn has_eligible_neighbor(&self, i: usize, links: Links<'_>) -> bool {
        links.of(i).iter().any(|&j| self.marginal(j) > 0.0)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Assignment {
        let mut d = vec![0u8; self.n];
        match &self.kind {
            DesignKind::Bernoulli { p } => {
                for (i, &pi) in p.iter().enumerate() {
                    if pi > 0.0 && rng.random::<f64>() < pi {
                        d[i] = 1;
                    }
                }
            }
            DesignKind::Blocks { blocks } => {
                for blk in blocks {
                    for k in rand::seq::index::sample(rng, blk.units.len(), blk.treated) {
                        d[blk.units[k]] = 1;
                    }
                }
            }
        }
        Assignment(d)
    }

    pub fn sample(&self, seed: u64) -> Assignment {
        self.sample_with(&mut seeds::rng(seed, seeds::stream::ASSIGNMENT, 0))
    }

    /// Number of assignments with positive probability.
    pub fn support_size(&self) -> f64 {
        match &self.kind {
            DesignKind::Bernoulli { p } => 2f64.powi(p.iter().filter(|&&v| v > 0.0 && v < 1.0).count() as i32),
            DesignKind::Blocks { blocks } => {
                blocks.iter().map(|b| binomial(b.units.len(), b.treated)).product()
            }
        }
    }

    /// Exhaustive support enumeration, refusing supports larger than `limit`.
    pub fn support(&self, limit: usize) -> Result<Support> {
        let size = self.support_size();
        if size > limit as f64 {
            return Err(Error::Capacity(format!(
                "design support has {size:.3e} assignments, limit is {limit}; use Monte Carlo instead"
            )));
        }
        let layout = match &self.kind {
            DesignKind::Bernoulli { p } => {
                let free: Vec<(usize, f64)> =
                    p.iter().enumerate().filter(|(_, &v)| v > 0.0 && v < 1.0).map(|(i, &v)| (i, v)).collect();
                let forced: Vec<usize> = (0..self.n).filter(|&i| p[i] >= 1.0).collect();
                Layout::Bernoulli { free, forced }
            }
            DesignKind::Blocks { blocks } => Layout::Blocks {
                combos: blocks.iter().map(|b| combinations(&b.units, b.treated)).collect(),
            },
        };
        let len = match &layout {
            Layout::Bernoulli { free, .. } => 1usize << free.len(),
            Layout::Blocks { combos } => combos.iter().map(Vec::len).product(),
        };
        Ok(Support { n: self.n, layout, len })
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn combinations(units: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(units: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..units.len() {
            if units.len() - i < k - cur.len() {
                break;
            }
            cur.push(units[i]);
            rec(units, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(units, k, 0, &mut Vec::with_capacity(k), &mut out);
    out
}

#[derive(Debug, Clone)]
enum Layout {
    Bernoulli { free: Vec<(usize, f64)>, forced: Vec<usize> },
    Blocks { combos: Vec<Vec<Vec<usize>>> },
}

/// Indexable enumeration of a design's support.
#[derive(Debug, Clone)]
pub struct Support {
    n: usize,
    layout: Layout,
    len: usize,
}

impl Support {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Writes assignment `idx` into `d` and returns its probability.
    pub fn fill(&self, idx: usize, d: &mut [u8]) -> f64 {
        d.iter_mut().for_each(|v| *v = 0);
        match &self.layout {
            Layout::Bernoulli { free, forced } => {
                for &i in forced {
                    d[i] = 1;
                }
                let mut prob = 1.0;
                for (bit, &(i, p)) in free.iter().enumerate() {
                    if idx >> bit & 1 == 1 {
                        d[i] = 1;
                        prob *= p;
                    } else {
                        prob *= 1.0 - p;
                    }
                }
                prob
            }
            Layout::Blocks { combos } => {
                let mut rest = idx;
                let mut prob = 1.0;
                for c in combos {
                    let k = rest % c.len();
                    rest /= c.len();
                    for &u in &c[k] {
                        d[u] = 1;
                    }
                    prob /= c.len() as f64;
                }
                prob
            }
        }
    }

    pub fn get(&self, idx: usize) -> (Assignment, f64) {
        let mut d = vec![0u8; self.n];
        let p = self.fill(idx, &mut d);
        (Assignment(d), p)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Assignment, f64)> + '_ {
        (0..self.len).map(move |k| self.get(k))
    }
}

/// How propensities were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum PropensityMethod {
    Exact,
    MonteCarlo { reps: usize, seed: u64 },
}

/// What the caller allows for marginal propensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropensityRequest {
    /// Closed form only; exposures without one are an error.
    ClosedForm,
    /// Closed form when available, Monte Carlo otherwise.
    MonteCarloFallback { reps: usize, seed: u64 },
    /// Always Monte Carlo.
    MonteCarlo { reps: usize, seed: u64 },
}

/// Marginal `pi_i(t)` for every unit and, optionally, joint `pi_ij(t,t')`
/// for a set of units.
#[derive(Debug, Clone)]
pub struct PropensityTable {
    n: usize,
    support: u32,
    pi: Vec<f64>,
    pub method: PropensityMethod,
    pairs: Option<PairTable>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
struct PairTable {
    s: usize,
    method: PropensityMethod,
    pos: HashMap<usize, usize>,
    store: PairStore,
}

#[derive(Debug, Clone)]
enum PairStore {
    /// `m * m * s * s` values over the covered units.
    Dense(Vec<f64>),
    /// Only dependent pairs are stored; absent pairs are independent.
    Sparse(HashMap<(usize, usize), Vec<f64>>),
}

/// Minimum and maximum of `pi_i(t)` over a set of units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapRange {
    pub exposure: ExposureValue,
    pub min: f64,
    pub max: f64,
}

impl PropensityTable {
    pub fn from_marginals(support: u32, pi: Vec<f64>, method: PropensityMethod) -> Result<Self> {
        if pi.len() % support as usize != 0 {
            return Err(Error::input("propensity vector length is not a multiple of the support size"));
        }
        Ok(PropensityTable { n: pi.len() / support as usize, support, pi, method, pairs: None, warnings: Vec::new() })
    }

    /// Attaches joint propensities for `units` laid out as
    /// `pairs[((a * m + b) * s + t) * s + t2]`.
    pub fn with_dense_pairs(mut self, units: &[usize], pairs: Vec<f64>, method: PropensityMethod) -> Result<Self> {
        let s = self.support as usize;
        let m = units.len();
        if pairs.len() != m * m * s * s {
            return Err(Error::input("joint propensity array has the wrong length"));
        }
        let pos = units.iter().enumerate().map(|(k, &u)| (u, k)).collect();
        self.pairs = Some(PairTable { s, method, pos, store: PairStore::Dense(pairs) });
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn support_size(&self) -> u32 {
        self.support
    }

    #[inline]
    pub fn pi(&self, i: usize, t: ExposureValue) -> f64 {
        self.pi[i * self.support as usize + t as usize]
    }

    pub fn has_pairs(&self) -> bool {
        self.pairs.is_some()
    }

    pub fn pair_method(&self) -> Option<PropensityMethod> {
        self.pairs.as_ref().map(|p| p.method)
    }

    /// `pi_ij(t, t')`. The diagonal is structural: `pi_ii(t,t) = pi_i(t)`
    /// and zero for `t != t'`.
    pub fn pair(&self, i: usize, j: usize, t: ExposureValue, t2: ExposureValue) -> Result<f64> {
        if i == j {
            return Ok(if t == t2 { self.pi(i, t) } else { 0.0 });
        }
        let table = self.pairs.as_ref().ok_or_else(|| Error::input("joint propensities were not computed"))?;
        let (Some(&a), Some(&b)) = (table.pos.get(&i), table.pos.get(&j)) else {
            return Err(Error::input(format!("missing joint propensity for units ({i},{j})")));
        };
        let s = table.s;
        let k = t as usize * s + t2 as usize;
        Ok(match &table.store {
            PairStore::Dense(v) => v[(a * table.pos.len() + b) * s * s + k],
            PairStore::Sparse(map) => match map.get(&(i, j)) {
                Some(v) => v[k],
                None => self.pi(i, t) * self.pi(j, t2),
            },
        })
    }

    /// Ordered pairs `(i, j)`, `i != j`, whose joint propensity may differ
    /// from the product of marginals. `None` when no pairs are stored.
    pub fn dependent_pairs(&self) -> Option<Vec<(usize, usize)>> {
        let table = self.pairs.as_ref()?;
        let mut out: Vec<(usize, usize)> = match &table.store {
            PairStore::Dense(_) => {
                let units: Vec<usize> = table.pos.keys().copied().collect();
                units.iter().flat_map(|&i| units.iter().filter(move |&&j| j != i).map(move |&j| (i, j))).collect()
            }
            PairStore::Sparse(map) => map.keys().copied().collect(),
        };
        out.sort_unstable();
        Some(out)
    }

    pub fn covers_pair(&self, i: usize) -> bool {
        self.pairs.as_ref().is_some_and(|p| p.pos.contains_key(&i))
    }

    /// Range of `pi_i(t)` over `units` for each exposure value.
    pub fn overlap(&self, units: &[usize]) -> Vec<OverlapRange> {
        (0..self.support)
            .map(|t| {
                let (min, max) = units.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = self.pi(i, t);
                    (lo.min(v), hi.max(v))
                });
                OverlapRange { exposure: t, min, max }
            })
            .collect()
    }

    /// Fails on the first unit whose `pi_i(t)` leaves `[lo, hi]`.
    pub fn check_overlap(&self, units: &[usize], ts: &[ExposureValue], lo: f64, hi: f64) -> Result<()> {
        for &i in units {
            for &t in ts {
                let v = self.pi(i, t);
                if !(lo..=hi).contains(&v) {
                    return Err(Error::Overlap { unit: i, exposure: t, pi: v });
                }
            }
        }
        Ok(())
    }
}

/// Probability that none of `n_nbrs` specific members of a block of size
/// `size` with `treated` treated is drawn (hypergeometric zero count).
pub fn hypergeometric_zero(size: usize, treated: usize, n_nbrs: usize) -> f64 {
    if n_nbrs > size - treated {
        return 0.0;
    }
    (0..n_nbrs).fold(1.0, |acc, k| acc * (size - treated - k) as f64 / (size - k) as f64)
}

fn exposure_pool<'a>(design: &'a Design, links: Links<'a>, i: usize) -> impl Iterator<Item = usize> + 'a {
    links.of(i).iter().copied().filter(move |&k| design.marginal(k) > 0.0)
}

fn closed_form_marginals(design: &Design, exposure: &ExposureSpec, links: Links<'_>) -> Option<Vec<f64>> {
    let n = design.n();
    let mut pi = vec![0.0; n * 2];
    match exposure {
        ExposureSpec::OwnTreatment => {
            for i in 0..n {
                let p = design.marginal(i);
                pi[2 * i] = 1.0 - p;
                pi[2 * i + 1] = p;
            }
        }
        ExposureSpec::AnyTreatedNeighbor => {
            for i in 0..n {
                let p0 = match design.kind() {
                    DesignKind::Bernoulli { p } => links.of(i).iter().map(|&j| 1.0 - p[j]).product(),
                    DesignKind::Blocks { blocks } => {
                        let mut per_block: HashMap<usize, usize> = HashMap::new();
                        for &j in links.of(i) {
                            if let Some(b) = design.block_of(j) {
                                *per_block.entry(b).or_default() += 1;
                            }
                        }
                        let mut keys: Vec<_> = per_block.into_iter().collect();
                        keys.sort_unstable();
                        keys.iter()
                            .map(|&(b, c)| hypergeometric_zero(blocks[b].units.len(), blocks[b].treated, c))
                            .product()
                    }
                };
                pi[2 * i] = p0;
                pi[2 * i + 1] = 1.0 - p0;
            }
        }
        ExposureSpec::FractionTreatedBinned { .. } => return None,
    }
    Some(pi)
}

/// Marginal propensity scores `pi_i(t)` for every unit.
pub fn propensity(
    design: &Design,
    exposure: &ExposureSpec,
    links: Links<'_>,
    request: PropensityRequest,
) -> Result<PropensityTable> {
    check_sizes(design, links)?;
    let s = exposure.support_size();
    let closed = match request {
        PropensityRequest::MonteCarlo { .. } => None,
        _ => closed_form_marginals(design, exposure, links),
    };
    match (closed, request) {
        (Some(pi), _) => PropensityTable::from_marginals(s, pi, PropensityMethod::Exact),
        (None, PropensityRequest::ClosedForm) => Err(Error::UnsupportedExposure(format!(
            "no closed-form propensity for `{exposure}`; request Monte Carlo"
        ))),
        (None, PropensityRequest::MonteCarloFallback { reps, seed } | PropensityRequest::MonteCarlo { reps, seed }) => {
            let counts = McCounts::run(design, exposure, links, reps, seed, &[]);
            let pi = counts.marginal.iter().map(|&c| c as f64 / reps as f64).collect();
            PropensityTable::from_marginals(s, pi, PropensityMethod::MonteCarlo { reps, seed })
        }
    }
}

fn check_sizes(design: &Design, links: Links<'_>) -> Result<()> {
    if design.n() != links.n() {
        return Err(Error::input(format!("design has {} units but the network has {}", design.n(), links.n())));
    }
    Ok(())
}

/// Below this many replications Monte Carlo joint propensities are flagged.
pub const MIN_PAIR_MC_REPS: usize = 10_000;

/// Marginal and joint propensities; joint ones cover ordered pairs of
/// `units`.
///
/// Closed forms are used for own treatment (both designs) and for
/// any-treated-neighbor under Bernoulli designs. Everything else is Monte
/// Carlo with `mc_reps` replications; Monte Carlo zeros are kept as exact
/// zeros only when the analytic feasibility check confirms the joint event
/// is impossible, and are otherwise floored at `0.5 / mc_reps` and flagged.
pub fn pairwise_propensity(
    design: &Design,
    exposure: &ExposureSpec,
    links: Links<'_>,
    units: &[usize],
    mc_reps: usize,
    seed: u64,
) -> Result<PropensityTable> {
    check_sizes(design, links)?;
    let s = exposure.support_size() as usize;
    let pos: HashMap<usize, usize> = units.iter().enumerate().map(|(k, &u)| (u, k)).collect();
    if pos.len() != units.len() {
        return Err(Error::input("duplicate units in pair request"));
    }
    let is_bernoulli = matches!(design.kind(), DesignKind::Bernoulli { .. });
    let closed_pairs = match exposure {
        ExposureSpec::OwnTreatment => Some(own_treatment_pairs(design, units)),
        ExposureSpec::AnyTreatedNeighbor if is_bernoulli => Some(any_neighbor_bernoulli_pairs(design, links, units)),
        _ => None,
    };
    if let Some(map) = closed_pairs {
        let mut table = propensity(design, exposure, links, PropensityRequest::ClosedForm)?;
        table.pairs = Some(PairTable { s, method: PropensityMethod::Exact, pos, store: PairStore::Sparse(map) });
        return Ok(table);
    }

    let mut warnings = Vec::new();
    if mc_reps < MIN_PAIR_MC_REPS {
        warnings.push(format!("joint propensities use only {mc_reps} Monte Carlo replications (< {MIN_PAIR_MC_REPS})"));
    }
    let counts = McCounts::run(design, exposure, links, mc_reps, seed, units);
    let marginal_method = PropensityMethod::MonteCarlo { reps: mc_reps, seed };
    let (pi, method) = match closed_form_marginals(design, exposure, links) {
        Some(pi) => (pi, PropensityMethod::Exact),
        None => (counts.marginal.iter().map(|&c| c as f64 / mc_reps as f64).collect(), marginal_method),
    };
    let m = units.len();
    let floor = 0.5 / mc_reps as f64;
    let rows: Vec<(Vec<f64>, Vec<String>)> = (0..m)
        .into_par_iter()
        .map(|a| {
            let mut row = vec![0.0; m * s * s];
            let mut notes = Vec::new();
            for b in 0..m {
                if a == b {
                    for t in 0..s {
                        row[b * s * s + t * s + t] = counts.count_single(a, t) as f64 / mc_reps as f64;
                    }
                    continue;
                }
                for t in 0..s {
                    for t2 in 0..s {
                        let c = counts.count_pair(a, t, b, t2);
                        let v = if c > 0 {
                            c as f64 / mc_reps as f64
                        } else {
                            match joint_feasible(design, exposure, links, units[a], t as u32, units[b], t2 as u32) {
                                Some(false) => 0.0,
                                _ => {
                                    notes.push(format!(
                                        "pi_({},{})({t},{t2}) never observed in {mc_reps} draws but not provably zero; floored",
                                        units[a], units[b]
                                    ));
                                    floor
                                }
                            }
                        };
                        row[b * s * s + t * s + t2] = v;
                    }
                }
            }
            (row, notes)
        })
        .collect();
    let mut dense = Vec::with_capacity(m * m * s * s);
    for (row, notes) in rows {
        dense.extend(row);
        warnings.extend(notes);
    }
    if warnings.len() > 25 {
        let total = warnings.len();
        warnings.truncate(20);
        warnings.push(format!("... {} more warnings", total - 20));
    }
    let mut table = PropensityTable::from_marginals(s as u32, pi, method)?;
    table.warnings = warnings;
    table.pairs = Some(PairTable { s, method: marginal_method, pos, store: PairStore::Dense(dense) });
    Ok(table)
}

fn own_treatment_pairs(design: &Design, units: &[usize]) -> HashMap<(usize, usize), Vec<f64>> {
    let mut map = HashMap::new();
    let DesignKind::Blocks { blocks } = design.kind() else {
        return map;
    };
    for &i in units {
        for &j in units {
            if i == j || design.block_of(i).is_none() || design.block_of(i) != design.block_of(j) {
                continue;
            }
            let blk = &blocks[design.block_of(i).unwrap()];
            let (m, t) = (blk.units.len() as f64, blk.treated as f64);
            let denom = m * (m - 1.0);
            let p11 = t * (t - 1.0) / denom;
            let p10 = t * (m - t) / denom;
            let p00 = (m - t) * (m - t - 1.0) / denom;
            // index [t_i * 2 + t_j]
            map.insert((i, j), vec![p00, p10, p10, p11]);
        }
    }
    map
}

fn any_neighbor_bernoulli_pairs(design: &Design, links: Links<'_>, units: &[usize]) -> HashMap<(usize, usize), Vec<f64>> {
    let pools: HashMap<usize, Vec<usize>> = units
        .iter()
        .map(|&i| {
            let mut v: Vec<usize> = exposure_pool(design, links, i).collect();
            v.sort_unstable();
            (i, v)
        })
        .collect();
    let mut holders: HashMap<usize, Vec<usize>> = HashMap::new();
    for &i in units {
        for &k in &pools[&i] {
            holders.entry(k).or_default().push(i);
        }
    }
    let q = |set: &mut dyn Iterator<Item = usize>| -> f64 { set.map(|k| 1.0 - design.marginal(k)).product() };
    let mut map = HashMap::new();
    for &i in units {
        let mut partners: Vec<usize> =
            pools[&i].iter().flat_map(|k| holders[k].iter().copied()).filter(|&j| j != i).collect();
        partners.sort_unstable();
        partners.dedup();
        for j in partners {
            let (ei, ej) = (&pools[&i], &pools[&j]);
            let qc = q(&mut ei.iter().copied().filter(|k| ej.binary_search(k).is_ok()));
            let qa = q(&mut ei.iter().copied().filter(|k| ej.binary_search(k).is_err()));
            let qb = q(&mut ej.iter().copied().filter(|k| ei.binary_search(k).is_err()));
            let p00 = qc * qa * qb;
            let p10 = qc * qb * (1.0 - qa);
            let p01 = qc * qa * (1.0 - qb);
            let p11 = (1.0 - qc) + qc * (1.0 - qa) * (1.0 - qb);
            map.insert((i, j), vec![p00, p01, p10, p11]);
        }
    }
    map
}

/// Whether `T_i = ti` and `T_j = tj` can occur together with positive
/// probability; `None` when no analytic check exists for the mapping.
pub fn joint_feasible(
    design: &Design,
    exposure: &ExposureSpec,
    links: Links<'_>,
    i: usize,
    ti: ExposureValue,
    j: usize,
    tj: ExposureValue,
) -> Option<bool> {
    if i == j && ti != tj {
        return Some(false);
    }
    match exposure {
        ExposureSpec::OwnTreatment => Some(own_feasible(design, &[(i, ti), (j, tj)])),
        ExposureSpec::AnyTreatedNeighbor => Some(any_neighbor_feasible(design, links, &[(i, ti), (j, tj)])),
        ExposureSpec::FractionTreatedBinned { .. } => None,
    }
}

fn own_feasible(design: &Design, req: &[(usize, ExposureValue)]) -> bool {
    let mut req = req.to_vec();
    req.sort_unstable();
    req.dedup();
    for &(u, t) in &req {
        let p = design.marginal(u);
        if (t == 1 && p == 0.0) || (t == 0 && p == 1.0) {
            return false;
        }
    }
    if let DesignKind::Blocks { blocks } = design.kind() {
        let mut per_block: HashMap<usize, (usize, usize)> = HashMap::new();
        for &(u, t) in &req {
            if let Some(b) = design.block_of(u) {
                let e = per_block.entry(b).or_default();
                if t == 1 {
                    e.0 += 1;
                } else {
                    e.1 += 1;
                }
            }
        }
        for (b, (on, off)) in per_block {
            let blk = &blocks[b];
            if on > blk.treated || off > blk.units.len() - blk.treated {
                return false;
            }
        }
    }
    true
}

fn any_neighbor_feasible(design: &Design, links: Links<'_>, req: &[(usize, ExposureValue)]) -> bool {
    let mut forbidden: Vec<usize> = Vec::new();
    for &(u, t) in req {
        if t == 0 {
            forbidden.extend(exposure_pool(design, links, u));
        }
    }
    forbidden.sort_unstable();
    forbidden.dedup();
    let free = |k: &usize| forbidden.binary_search(k).is_err();
    match design.kind() {
        DesignKind::Bernoulli { p } => {
            if forbidden.iter().any(|&k| p[k] >= 1.0) {
                return false;
            }
            req.iter().filter(|r| r.1 == 1).all(|&(u, _)| exposure_pool(design, links, u).any(|k| free(&k)))
        }
        DesignKind::Blocks { blocks } => {
            let mut blocked: HashMap<usize, usize> = HashMap::new();
            for &k in &forbidden {
                if let Some(b) = design.block_of(k) {
                    *blocked.entry(b).or_default() += 1;
                }
            }
            if blocked.iter().any(|(&b, &c)| blocks[b].units.len() - c < blocks[b].treated) {
                return false;
            }
            let hits: Vec<Vec<usize>> = req
                .iter()
                .filter(|r| r.1 == 1)
                .map(|&(u, _)| exposure_pool(design, links, u).filter(|k| free(k)).collect())
                .collect();
            let cap = |k: usize| design.block_of(k).map_or(0, |b| blocks[b].treated);
            match hits.as_slice() {
                [] => true,
                [h] => h.iter().any(|&k| cap(k) >= 1),
                [h1, h2] => {
                    if req[0].0 == req[1].0 {
                        return h1.iter().any(|&k| cap(k) >= 1);
                    }
                    h1.iter().any(|&k| cap(k) >= 1 && h2.contains(&k))
                        || h1.iter().any(|&a| {
                            h2.iter().any(|&b| {
                                a != b
                                    && if design.block_of(a) == design.block_of(b) {
                                        cap(a) >= 2
                                    } else {
                                        cap(a) >= 1 && cap(b) >= 1
                                    }
                            })
                        })
                }
                _ => unreachable!("at most two requirements"),
            }
        }
    }
}

/// Monte Carlo exposure tallies: marginal counts for every unit and
/// per-replication indicator bitsets for a tracked subset of units.
struct McCounts {
    s: usize,
    words: usize,
    marginal: Vec<u64>,
    /// `bits[(a * s + t) * words ..]` for tracked unit `a`.
    bits: Vec<u64>,
}

const MC_CHUNK: usize = 1024;

impl McCounts {
    fn run(design: &Design, exposure: &ExposureSpec, links: Links<'_>, reps: usize, seed: u64, tracked: &[usize]) -> Self {
        let n = design.n();
        let s = exposure.support_size() as usize;
        let m = tracked.len();
        let words = reps.div_ceil(64);
        let chunks = reps.div_ceil(MC_CHUNK);
        let parts: Vec<(Vec<u64>, Vec<u64>)> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let lo = c * MC_CHUNK;
                let hi = (lo + MC_CHUNK).min(reps);
                let cw = (hi - lo).div_ceil(64);
                let mut marg = vec![0u64; n * s];
                let mut bits = vec![0u64; m * s * cw];
                for r in lo..hi {
                    let d = design.sample_with(&mut seeds::rng(seed, seeds::stream::PROPENSITY_MC, r as u64));
                    for i in 0..n {
                        marg[i * s + exposure.exposure_of(i, &d, links) as usize] += 1;
                    }
                    let (w, bit) = ((r - lo) / 64, (r - lo) % 64);
                    for (a, &u) in tracked.iter().enumerate() {
                        let t = exposure.exposure_of(u, &d, links) as usize;
                        bits[(a * s + t) * cw + w] |= 1 << bit;
                    }
                }
                (marg, bits)
            })
            .collect();
        let mut marginal = vec![0u64; n * s];
        let mut bits = vec![0u64; m * s * words];
        for (c, (marg, cb)) in parts.into_iter().enumerate() {
            marginal.iter_mut().zip(&marg).for_each(|(a, b)| *a += b);
            let cw = cb.len() / (m * s).max(1);
            let w0 = c * MC_CHUNK / 64;
            for row in 0..m * s {
                bits[row * words + w0..row * words + w0 + cw].copy_from_slice(&cb[row * cw..(row + 1) * cw]);
            }
        }
        McCounts { s, words, marginal, bits }
    }

    fn row(&self, a: usize, t: usize) -> &[u64] {
        let off = (a * self.s + t) * self.words;
        &self.bits[off..off + self.words]
    }

    fn count_single(&self, a: usize, t: usize) -> u64 {
        self.row(a, t).iter().map(|w| w.count_ones() as u64).sum()
    }

    fn count_pair(&self, a: usize, t: usize, b: usize, t2: usize) -> u64 {
        self.row(a, t).iter().zip(self.row(b, t2)).map(|(x, y)| (x & y).count_ones() as u64).sum()
    }
}
