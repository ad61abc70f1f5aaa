//! Exact design-based estimands and estimator moments by enumerating every
//! assignment in the design's support.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{as_variance, Sample};
use crate::design::{Design, DesignKind, PropensityMethod, PropensityTable};
use crate::error::{Error, Result};
use crate::exposure::{ExposureSpec, ExposureValue};
use crate::graph::{Graph, Links};
use crate::outcomes::OutcomeModel;

pub const MAX_BERNOULLI_SUPPORT: usize = 1 << 20;
pub const MAX_BLOCK_SUPPORT: usize = 1_000_000;
const CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub t: ExposureValue,
    pub t0: ExposureValue,
    pub b: usize,
    /// Units to analyze; defaults to all units for which both conditional
    /// means are defined.
    pub units: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactEstimands {
    pub support_size: usize,
    pub b: usize,
    pub units: Vec<usize>,
    /// Units dropped because `P(T_i = t) = 0` for one of the contrasted values.
    pub excluded: Vec<usize>,
    pub pi_t: Vec<f64>,
    pub pi_t0: Vec<f64>,
    pub mu_t: Vec<f64>,
    pub mu_t0: Vec<f64>,
    pub tau_i: Vec<f64>,
    pub tau: f64,
    /// `E[tau_hat]` under the design.
    pub expected_tau_hat: f64,
    /// `Var(sqrt(n) tau_hat)`.
    pub true_variance: f64,
    pub r_n: f64,
    pub expected_sigma2: f64,
    /// Expectation of the HAC form centered at the unit-level effects.
    pub expected_sigma2_star: f64,
    /// `E[2/n sum W (Z_i - tau_i)(tau_j - tau)]`.
    pub expected_cross: f64,
    /// Expectation of the terms involving `tau - tau_hat`.
    pub expected_remainder: f64,
    /// `E[sigma2] - Var - R_n`.
    pub cross_term: f64,
    /// Largest per-assignment violation of
    /// `sigma2 = sigma2_star + R_n + cross + remainder`.
    pub identity_residual: f64,
    /// Present only for exposure-table models (correct specification).
    pub r_n_as: Option<f64>,
    pub expected_sigma2_as: Option<f64>,
}

#[derive(Clone)]
struct Marginals {
    p: Vec<f64>,
    py: Vec<f64>,
    joint: Vec<f64>,
}

impl Marginals {
    fn zeros(n: usize, s: usize) -> Self {
        Marginals { p: vec![0.0; n * s], py: vec![0.0; n * s], joint: vec![0.0; n * n * s * s] }
    }

    fn add(&mut self, o: &Self) {
        for (a, b) in [(&mut self.p, &o.p), (&mut self.py, &o.py), (&mut self.joint, &o.joint)] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

#[derive(Clone, Copy, Default)]
struct Moments {
    tau_hat: f64,
    sq_dev: f64,
    sigma2: f64,
    star: f64,
    cross: f64,
    rem: f64,
    resid: f64,
    sigma2_as: f64,
}

impl Moments {
    fn add(&mut self, o: &Self) {
        self.tau_hat += o.tau_hat;
        self.sq_dev += o.sq_dev;
        self.sigma2 += o.sigma2;
        self.star += o.star;
        self.cross += o.cross;
        self.rem += o.rem;
        self.resid = self.resid.max(o.resid);
        self.sigma2_as += o.sigma2_as;
    }
}

/// Enumerates the design's support and returns exact estimands together
/// with exact moments of the IPW, HAC and (for exposure-table models) AS
/// estimators. Propensities are the exact enumeration frequencies.
pub fn exact_estimands(
    model: &OutcomeModel,
    design: &Design,
    exposure: &ExposureSpec,
    g: &Graph,
    opts: &OracleOptions,
) -> Result<ExactEstimands> {
    let n = g.n();
    if design.n() != n {
        return Err(Error::input("design and network sizes differ"));
    }
    let s = exposure.support_size() as usize;
    let (t, t0) = (opts.t, opts.t0);
    if t == t0 || !exposure.in_support(t) || !exposure.in_support(t0) {
        return Err(Error::input(format!("contrast ({t},{t0}) must be two distinct values in the exposure support")));
    }
    let limit = match design.kind() {
        DesignKind::Bernoulli { .. } => MAX_BERNOULLI_SUPPORT,
        DesignKind::Blocks { .. } => MAX_BLOCK_SUPPORT,
    };
    let support = design.support(limit)?;
    let links = Links::Undirected(g);
    let chunks = support.len().div_ceil(CHUNK);

    let evaluate = |idx: usize, d: &mut Vec<u8>| -> Result<(f64, Vec<f64>, Vec<ExposureValue>)> {
        let p = support.fill(idx, d);
        Ok((p, model.evaluate(g, d)?, exposure.compute(d, links)))
    };

    let parts: Vec<Marginals> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<Marginals> {
            let mut acc = Marginals::zeros(n, s);
            let mut d = vec![0u8; n];
            for idx in c * CHUNK..((c + 1) * CHUNK).min(support.len()) {
                let (p, y, e) = evaluate(idx, &mut d)?;
                for i in 0..n {
                    let k = i * s + e[i] as usize;
                    acc.p[k] += p;
                    acc.py[k] += p * y[i];
                    for j in 0..n {
                        acc.joint[((i * n + j) * s + e[i] as usize) * s + e[j] as usize] += p;
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut marg = Marginals::zeros(n, s);
    for part in &parts {
        marg.add(part);
    }
    drop(parts);

    let candidates: Vec<usize> = opts.units.clone().unwrap_or_else(|| (0..n).collect());
    let defined = |i: usize| marg.p[i * s + t as usize] > 0.0 && marg.p[i * s + t0 as usize] > 0.0;
    let units: Vec<usize> = candidates.iter().copied().filter(|&i| defined(i)).collect();
    let excluded: Vec<usize> = candidates.iter().copied().filter(|&i| !defined(i)).collect();
    if units.is_empty() {
        return Err(Error::input("no unit has both contrasted exposure values with positive probability"));
    }
    let m = units.len();
    let pi_at = |i: usize, e: ExposureValue| marg.p[i * s + e as usize];
    let mu_at = |i: usize, e: ExposureValue| marg.py[i * s + e as usize] / pi_at(i, e);
    let pi_t: Vec<f64> = units.iter().map(|&i| pi_at(i, t)).collect();
    let pi_t0: Vec<f64> = units.iter().map(|&i| pi_at(i, t0)).collect();
    let mu_t: Vec<f64> = units.iter().map(|&i| mu_at(i, t)).collect();
    let mu_t0: Vec<f64> = units.iter().map(|&i| mu_at(i, t0)).collect();
    let tau_i: Vec<f64> = mu_t.iter().zip(&mu_t0).map(|(a, b)| a - b).collect();
    let tau = tau_i.iter().sum::<f64>() / m as f64;
    let c: Vec<f64> = tau_i.iter().map(|v| v - tau).collect();

    // kernel weights among sample units
    let w: Vec<bool> = units
        .iter()
        .flat_map(|&i| {
            let near = g.capped_bfs(i, opts.b);
            units.iter().map(move |j| near.contains_key(j)).collect::<Vec<_>>()
        })
        .collect();
    let k_row: Vec<f64> = (0..m).map(|a| (0..m).filter(|&b| w[a * m + b]).count() as f64).collect();
    let r_n = quad(&w, m, &c, &c) / m as f64;

    let table = {
        let mut pairs = vec![0.0; m * m * s * s];
        for (a, &i) in units.iter().enumerate() {
            for (b, &j) in units.iter().enumerate() {
                let src = (i * n + j) * s * s;
                pairs[(a * m + b) * s * s..(a * m + b + 1) * s * s].copy_from_slice(&marg.joint[src..src + s * s]);
            }
        }
        PropensityTable::from_marginals(s as u32, marg.p.clone(), PropensityMethod::Exact)?.with_dense_pairs(
            &units,
            pairs,
            PropensityMethod::Exact,
        )?
    };
    let correct_spec = model.exposure_table().filter(|(e, _)| *e == exposure).map(|(_, tab)| tab);

    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|ch| -> Result<Moments> {
            let mut acc = Moments::default();
            let mut d = vec![0u8; n];
            for idx in ch * CHUNK..((ch + 1) * CHUNK).min(support.len()) {
                let (p, y, e) = evaluate(idx, &mut d)?;
                let z: Vec<f64> = units
                    .iter()
                    .enumerate()
                    .map(|(a, &i)| {
                        let mut v = 0.0;
                        if e[i] == t {
                            v += y[i] / pi_t[a];
                        }
                        if e[i] == t0 {
                            v -= y[i] / pi_t0[a];
                        }
                        v
                    })
                    .collect();
                let tau_hat = z.iter().sum::<f64>() / m as f64;
                let dev: Vec<f64> = z.iter().map(|v| v - tau_hat).collect();
                let a_dev: Vec<f64> = z.iter().zip(&tau_i).map(|(v, ti)| v - ti).collect();
                let sigma2 = quad(&w, m, &dev, &dev) / m as f64;
                let star = quad(&w, m, &a_dev, &a_dev) / m as f64;
                let cross = 2.0 * quad(&w, m, &a_dev, &c) / m as f64;
                let err = tau - tau_hat;
                let rem = (2.0 * err * (0..m).map(|k| (a_dev[k] + c[k]) * k_row[k]).sum::<f64>()
                    + err * err * k_row.iter().sum::<f64>())
                    / m as f64;
                acc.tau_hat += p * tau_hat;
                acc.sq_dev += p * (tau_hat - tau) * (tau_hat - tau);
                acc.sigma2 += p * sigma2;
                acc.star += p * star;
                acc.cross += p * cross;
                acc.rem += p * rem;
                acc.resid = acc.resid.max((sigma2 - star - r_n - cross - rem).abs());
                if correct_spec.is_some() {
                    let sample = Sample::new(units.clone(), &y, &e, &table);
                    acc.sigma2_as += p * as_variance(&sample, t, t0)?;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut mom = Moments::default();
    for part in &parts {
        mom.add(part);
    }

    let bias = mom.tau_hat - tau;
    let true_variance = m as f64 * (mom.sq_dev - bias * bias);
    let r_n_as = correct_spec.map(|tab| {
        let yt = |i: usize, e: ExposureValue| tab[i][e as usize];
        let mut total = 0.0;
        for &i in &units {
            total += (yt(i, t) - yt(i, t0)).powi(2);
        }
        let zero = |i: usize, j: usize, e1: ExposureValue, e2: ExposureValue| {
            marg.joint[((i * n + j) * s + e1 as usize) * s + e2 as usize] == 0.0
        };
        for &i in &units {
            for &j in &units {
                if i == j {
                    continue;
                }
                let mut v = 0.0;
                if zero(i, j, t, t) {
                    v += (yt(i, t) + yt(j, t)).powi(2);
                }
                if zero(i, j, t, t0) {
                    v += 2.0 * (yt(i, t) - yt(j, t0)).powi(2);
                }
                if zero(i, j, t0, t0) {
                    v += (yt(i, t0) + yt(j, t0)).powi(2);
                }
                total += 0.5 * v;
            }
        }
        total / m as f64
    });

    Ok(ExactEstimands {
        support_size: support.len(),
        b: opts.b,
        units,
        excluded,
        pi_t,
        pi_t0,
        mu_t,
        mu_t0,
        tau_i,
        tau,
        expected_tau_hat: mom.tau_hat,
        true_variance,
        r_n,
        expected_sigma2: mom.sigma2,
        expected_sigma2_star: mom.star,
        expected_cross: mom.cross,
        expected_remainder: mom.rem,
        cross_term: mom.sigma2 - true_variance - r_n,
        identity_residual: mom.resid,
        r_n_as,
        expected_sigma2_as: correct_spec.map(|_| mom.sigma2_as),
    })
}

/// `sum_a sum_b w_ab x_a y_b` for a dense 0/1 kernel.
fn quad(w: &[bool], m: usize, x: &[f64], y: &[f64]) -> f64 {
    let mut total = 0.0;
    for a in 0..m {
        let row = &w[a * m..(a + 1) * m];
        let mut inner = 0.0;
        for b in 0..m {
            if row[b] {
                inner += y[b];
            }
        }
        total += x[a] * inner;
    }
    total
}
