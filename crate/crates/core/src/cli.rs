//! Command-line front end.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::design::{pairwise_propensity, propensity, Block, Design, PropensityMethod, PropensityRequest, PropensityTable};
use crate::error::{Error, Result};
use crate::estimators::oracle::{exact_estimands, OracleOptions};
use crate::estimators::{
    bandwidth_rule, estimate, hac_variance, ipw_point, Bandwidth, BandwidthChoice, EstimateReport, Sample, SampleRule,
    VarianceKind,
};
use crate::exposure::{ExposureSpec, ExposureValue};
use crate::graph::{Graph, GraphSummary, Links, NeighborhoodProfile};
use crate::io::{self, UnitRow};
use crate::mc::{run_mc, McConfig};
use crate::netgen::{self, RadiusRule, RggPlacement};
use crate::outcomes::{draw_epsilon, EpsilonMode, ModelSpec};
use crate::seeds::{self, stream};

#[derive(Parser, Debug)]
#[command(name = "interfere", version, about = "Exposure effects under network interference")]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, env = "INTERFERE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a network and write it as an edge list.
    GenGraph(GenGraphArgs),
    /// Draw shocks and an assignment, and write the realized units file.
    Simulate(SimulateArgs),
    /// Point estimate and standard errors from a graph and a units file.
    Estimate(EstimateArgs),
    /// Topology summary, neighborhood growth and the suggested bandwidth.
    Diagnose(DiagnoseArgs),
    /// Monte Carlo experiment from a JSON configuration.
    Mc(McArgs),
    /// Exact estimands of a small instance by enumerating the design.
    Oracle(OracleArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum GraphModel {
    Configuration,
    Rgg,
}

#[derive(Args, Debug)]
struct GenGraphArgs {
    #[arg(long, value_enum)]
    model: GraphModel,
    /// Degree sequence file, one integer per line.
    #[arg(long, conflicts_with_all = ["schools", "n"])]
    degrees: Option<PathBuf>,
    /// Pool of bundled calibration schools (1, 2 or 4).
    #[arg(long, conflicts_with = "n")]
    schools: Option<usize>,
    /// Node count (geometric graphs only).
    #[arg(long)]
    n: Option<usize>,
    /// Expected degree of the geometric graph; defaults to the mean degree.
    #[arg(long)]
    kappa: Option<f64>,
    /// Use the squared radius formula instead of the square root.
    #[arg(long)]
    rn_literal: bool,
    #[arg(long)]
    seed: u64,
    /// Edge list destination (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write node positions as `x,y` CSV (geometric graphs only).
    #[arg(long)]
    positions: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GraphInput {
    /// Edge list file.
    #[arg(long)]
    graph: PathBuf,
    /// Treat edges as directed arcs and symmetrize.
    #[arg(long)]
    directed: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    input: GraphInput,
    /// `lim:a,b,d,g` or `contagion:a,b,d,g`.
    #[arg(long)]
    model: ModelSpec,
    /// `bernoulli:<p>` or `blocks:<treated fraction>`.
    #[arg(long, default_value = "bernoulli:0.5")]
    design: String,
    /// Share of units eligible for treatment, drawn at random.
    #[arg(long, default_value_t = 1.0)]
    eligible_fraction: f64,
    #[arg(long, default_value = "normal")]
    epsilon: EpsilonMode,
    /// Node positions for homophilous shocks.
    #[arg(long)]
    positions: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    input: GraphInput,
    /// Units CSV with header `id,outcome,treatment,eligible,block`.
    #[arg(long)]
    units: PathBuf,
    #[arg(long, default_value = "any-nbr")]
    exposure: ExposureSpec,
    #[arg(long, default_value_t = 1)]
    t: ExposureValue,
    #[arg(long, default_value_t = 0)]
    t0: ExposureValue,
    /// `auto` or a fixed integer.
    #[arg(long, default_value = "auto")]
    bandwidth: String,
    /// Comma-separated subset of hac, as, naive.
    #[arg(long, default_value = "hac,naive", value_delimiter = ',')]
    variance: Vec<VarianceKind>,
    #[arg(long, default_value = "has-eligible-neighbor")]
    sample: SampleRule,
    /// Range `lo..hi` of bandwidths for the standard error table.
    #[arg(long)]
    bandwidth_sweep: Option<String>,
    /// Flip the regime comparison of the bandwidth rule.
    #[arg(long)]
    literal_bandwidth_rule: bool,
    /// Treatment probability for units files without blocks.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    /// Override the average path length fed to the bandwidth rule.
    #[arg(long)]
    apl: Option<f64>,
    /// Override the average degree fed to the bandwidth rule.
    #[arg(long)]
    avg_degree: Option<f64>,
    /// Override the network size fed to the bandwidth rule.
    #[arg(long)]
    summary_n: Option<usize>,
    /// Monte Carlo replications when propensities have no closed form.
    #[arg(long, default_value_t = 100_000)]
    propensity_reps: usize,
    /// Seed for Monte Carlo propensities.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    #[command(flatten)]
    input: GraphInput,
    /// Exposure radius.
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    s_max: usize,
    #[arg(long, default_value_t = 2)]
    moments: u32,
    #[arg(long)]
    literal_bandwidth_rule: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct McArgs {
    /// JSON configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configuration's replication count.
    #[arg(long)]
    reps: Option<usize>,
    /// JSON report destination (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a one-row-per-estimator CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    input: GraphInput,
    #[arg(long)]
    model: ModelSpec,
    /// Units CSV giving eligibility and blocks; all units Bernoulli(p) otherwise.
    #[arg(long)]
    units: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long, default_value = "any-nbr")]
    exposure: ExposureSpec,
    #[arg(long, default_value_t = 1)]
    t: ExposureValue,
    #[arg(long, default_value_t = 0)]
    t0: ExposureValue,
    /// HAC bandwidth; defaults to twice the exposure radius.
    #[arg(long)]
    b: Option<usize>,
    /// Seed for the shocks.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 2;
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenGraph(a) => gen_graph(a),
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate_cmd(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Mc(a) => mc(a),
        Command::Oracle(a) => oracle(a),
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    emit(path, &(io::to_json(value)? + "\n"))
}

fn load_graph(input: &GraphInput) -> Result<Graph> {
    let f = File::open(&input.graph)
        .map_err(|e| Error::input(format!("cannot open graph {}: {e}", input.graph.display())))?;
    let (g, report) = Graph::read_edge_list(BufReader::new(f), input.directed)?;
    if report.self_loops_removed + report.duplicates_removed > 0 {
        eprintln!(
            "note: dropped {} self-loops and {} duplicate edges",
            report.self_loops_removed, report.duplicates_removed
        );
    }
    Ok(g)
}

fn load_units(path: &Path) -> Result<Vec<UnitRow>> {
    let f = File::open(path).map_err(|e| Error::input(format!("cannot open units {}: {e}", path.display())))?;
    io::read_units(BufReader::new(f))
}

fn read_positions(path: &Path, n: usize) -> Result<RggPlacement> {
    let mut rdr = csv::Reader::from_path(path)?;
    let positions = rdr.deserialize::<(f64, f64)>().map(|r| r.map(|(x, y)| [x, y])).collect::<std::result::Result<Vec<_>, _>>()?;
    if positions.len() != n {
        return Err(Error::input(format!("{} positions for {n} nodes", positions.len())));
    }
    Ok(RggPlacement { positions, radius: f64::NAN })
}

fn gen_graph(a: GenGraphArgs) -> Result<()> {
    let degrees = match (&a.degrees, a.schools) {
        (Some(p), _) => Some(netgen::read_degrees(BufReader::new(File::open(p)?))?),
        (None, Some(k)) => {
            let text = netgen::bundled_calibration(k)
                .ok_or_else(|| Error::input(format!("no bundled calibration for {k} schools (use 1, 2 or 4)")))?;
            Some(netgen::read_degrees(text.as_bytes())?)
        }
        _ => None,
    };
    let seed = seeds::derive(a.seed, stream::GRAPH, 0);
    let (g, placement) = match a.model {
        GraphModel::Configuration => {
            let d = degrees.ok_or_else(|| Error::input("configuration model needs --degrees or --schools"))?;
            let (g, report) = netgen::configuration_model(&d, seed)?;
            if report.erased_self_loops + report.erased_multi_edges > 0 || report.padded_node.is_some() {
                eprintln!(
                    "note: erased {} self-loops and {} multi-edges{}",
                    report.erased_self_loops,
                    report.erased_multi_edges,
                    report.padded_node.map(|i| format!(", padded node {i} to even the stub count")).unwrap_or_default()
                );
            }
            (g, None)
        }
        GraphModel::Rgg => {
            let n = match (a.n, &degrees) {
                (Some(n), _) => n,
                (None, Some(d)) => d.len(),
                (None, None) => return Err(Error::input("rgg needs --n, --degrees or --schools")),
            };
            let kappa = match (a.kappa, &degrees) {
                (Some(k), _) => k,
                (None, Some(d)) if !d.is_empty() => d.iter().sum::<usize>() as f64 / d.len() as f64,
                _ => return Err(Error::input("rgg needs --kappa when no degree sequence is given")),
            };
            let rule = if a.rn_literal { RadiusRule::Literal } else { RadiusRule::Sqrt };
            let (g, pl) = netgen::rgg(n, kappa, rule, seed)?;
            (g, Some(pl))
        }
    };
    if let Some(path) = &a.positions {
        let pl = placement.as_ref().ok_or_else(|| Error::input("--positions only applies to geometric graphs"))?;
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y"])?;
        for p in &pl.positions {
            w.write_record([io::fmt_float(p[0]), io::fmt_float(p[1])])?;
        }
        w.flush()?;
    }
    let mut buf = Vec::new();
    g.write_edge_list(&mut buf)?;
    emit(a.out.as_deref(), &String::from_utf8_lossy(&buf))
}

fn parse_design(spec: &str) -> Result<(&str, f64)> {
    let (kind, v) = spec.split_once(':').ok_or_else(|| Error::input(format!("design `{spec}` should be bernoulli:<p> or blocks:<fraction>")))?;
    let v: f64 = v.parse().map_err(|_| Error::input(format!("bad design parameter `{v}`")))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::input(format!("design parameter {v} outside [0,1]")));
    }
    match kind {
        "bernoulli" | "blocks" => Ok((kind, v)),
        other => Err(Error::input(format!("unknown design `{other}`"))),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let g = load_graph(&a.input)?;
    let n = g.n();
    if !(0.0..=1.0).contains(&a.eligible_fraction) {
        return Err(Error::input("eligible fraction must be in [0,1]"));
    }
    let k = (n as f64 * a.eligible_fraction).round() as usize;
    let mut eligible = rand::seq::index::sample(&mut seeds::rng(a.seed, stream::ELIGIBLE, 0), n, k).into_vec();
    eligible.sort_unstable();
    let (kind, v) = parse_design(&a.design)?;
    let design = if kind == "blocks" {
        let treated = (eligible.len() as f64 * v).floor() as usize;
        Design::blocks(n, vec![Block { units: eligible.clone(), treated }])?
    } else {
        Design::bernoulli(n, &eligible, v)?
    };
    let placement = a.positions.as_deref().map(|p| read_positions(p, n)).transpose()?;
    let eps = draw_epsilon(n, a.epsilon, placement.as_ref(), a.seed, 0)?;
    let d = design.sample(a.seed);
    let y = a.model.with_epsilon(eps).evaluate(&g, &d.0)?;
    let rows: Vec<UnitRow> = (0..n)
        .map(|i| {
            let el = design.is_eligible(i);
            UnitRow {
                id: i,
                outcome: Some(y[i]),
                treatment: Some(d.0[i]),
                eligible: el as u8,
                block: (kind == "blocks" && el).then_some(0),
            }
        })
        .collect();
    let mut buf = Vec::new();
    io::write_units(&rows, &mut buf)?;
    emit(a.out.as_deref(), &String::from_utf8_lossy(&buf))
}

fn parse_sweep(s: &str) -> Result<std::ops::RangeInclusive<usize>> {
    let bad = || Error::input(format!("bandwidth sweep `{s}` should look like 0..3"));
    let (lo, hi) = s.split_once("..").ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(bad());
    }
    Ok(lo..=hi)
}

#[derive(Debug, Serialize)]
struct SweepRow {
    b: usize,
    se_tau: Option<f64>,
    se_mu_t: Option<f64>,
    se_mu_t0: Option<f64>,
}

#[derive(Debug, Serialize)]
struct EstimateOutput {
    exposure: String,
    t: ExposureValue,
    t0: ExposureValue,
    summary: Option<GraphSummary>,
    bandwidth_rule: Option<Bandwidth>,
    propensity_method: PropensityMethod,
    #[serde(flatten)]
    report: EstimateReport,
    sweep: Option<Vec<SweepRow>>,
}

fn need_seed(seed: Option<u64>) -> Result<u64> {
    seed.ok_or_else(|| Error::input("propensities need Monte Carlo here; pass --seed"))
}

fn estimate_cmd(a: EstimateArgs) -> Result<()> {
    let g = load_graph(&a.input)?;
    let n = g.n();
    let rows = load_units(&a.units)?;
    if rows.len() != n {
        return Err(Error::input(format!("units file has {} rows but the graph has {n} nodes", rows.len())));
    }
    let design = io::design_from_units(&rows, a.p)?;
    let links = Links::Undirected(&g);
    let d: Vec<u8> = rows
        .iter()
        .map(|r| r.treatment.ok_or_else(|| Error::input(format!("unit {} has no treatment", r.id))))
        .collect::<Result<_>>()?;
    let t_full = a.exposure.compute(&d, links);
    let units = a.sample.select(&design, links);
    if units.is_empty() {
        return Err(Error::input("analysis sample is empty"));
    }
    let mut y = vec![f64::NAN; n];
    for &i in &units {
        y[i] = rows[i].outcome.ok_or_else(|| Error::input(format!("unit {i} is in the sample but has no outcome")))?;
    }
    let table: PropensityTable = if a.variance.contains(&VarianceKind::As) {
        let seed = a.seed.unwrap_or(0);
        let t = pairwise_propensity(&design, &a.exposure, links, &units, a.propensity_reps, seed)?;
        if t.pair_method() != Some(PropensityMethod::Exact) || t.method != PropensityMethod::Exact {
            need_seed(a.seed)?;
        }
        t
    } else {
        match propensity(&design, &a.exposure, links, PropensityRequest::ClosedForm) {
            Ok(t) => t,
            Err(Error::UnsupportedExposure(_)) => {
                let seed = need_seed(a.seed)?;
                propensity(&design, &a.exposure, links, PropensityRequest::MonteCarlo { reps: a.propensity_reps, seed })?
            }
            Err(e) => return Err(e),
        }
    };
    let sample = Sample::new(units, &y, &t_full, &table);

    let k = a.exposure.radius();
    let auto = a.bandwidth.trim() == "auto";
    let choice = if auto {
        BandwidthChoice::Auto { literal: a.literal_bandwidth_rule }
    } else {
        BandwidthChoice::Fixed(
            a.bandwidth.trim().parse().map_err(|_| Error::input(format!("bandwidth `{}` is not auto or an integer", a.bandwidth)))?,
        )
    };
    let summary = auto.then(|| {
        let mut s = g.summary();
        if let Some(v) = a.apl {
            s.apl = v;
        }
        if let Some(v) = a.avg_degree {
            s.avg_degree = v;
        }
        if let Some(v) = a.summary_n {
            s.n = v;
        }
        s
    });
    let rule = summary.as_ref().map(|s| bandwidth_rule(s.apl, s.n, s.avg_degree, k, a.literal_bandwidth_rule));
    let report = estimate(&g, &sample, a.t, a.t0, k, choice, &a.variance, summary.as_ref())?;

    let sweep = match &a.bandwidth_sweep {
        None => None,
        Some(s) => {
            let point = ipw_point(&sample, a.t, a.t0)?;
            let se = |w: &[f64], c: f64, b: usize| {
                let v = hac_variance(&g, &sample.units, w, c, b).sigma2;
                (v >= 0.0).then(|| (v / point.n as f64).sqrt())
            };
            Some(
                parse_sweep(s)?
                    .map(|b| SweepRow {
                        b,
                        se_tau: se(&point.z, point.tau, b),
                        se_mu_t: se(&point.w_t, point.mu_t, b),
                        se_mu_t0: se(&point.w_t0, point.mu_t0, b),
                    })
                    .collect::<Vec<_>>(),
            )
        }
    };
    if let Some(rows) = &sweep {
        let table = sweep_table(&report, a.t, a.t0, rows);
        if a.out.is_some() {
            print!("{table}");
        } else {
            eprint!("{table}");
        }
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let out = EstimateOutput {
        exposure: a.exposure.to_string(),
        t: a.t,
        t0: a.t0,
        summary,
        bandwidth_rule: rule,
        propensity_method: table.method,
        report,
        sweep,
    };
    emit_json(a.out.as_deref(), &out)
}

fn sweep_table(r: &EstimateReport, t: ExposureValue, t0: ExposureValue, rows: &[SweepRow]) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    let mut s = format!("{:<10}{:>12}{:>12}{:>12}\n", "", "tau", format!("mu({t})"), format!("mu({t0})"));
    s += &format!("{:<10}{:>12.4}{:>12.4}{:>12.4}\n", "estimate", r.tau, r.mu_t, r.mu_t0);
    for row in rows {
        s += &format!(
            "{:<10}{:>12}{:>12}{:>12}\n",
            format!("SE b={}", row.b),
            cell(row.se_tau),
            cell(row.se_mu_t),
            cell(row.se_mu_t0)
        );
    }
    s += &format!("{:<10}{:>12}\n", "n", r.n);
    s
}

#[derive(Debug, Serialize)]
struct Diagnosis {
    summary: GraphSummary,
    profile: NeighborhoodProfile,
    bandwidth: Bandwidth,
}

fn diagnose(a: DiagnoseArgs) -> Result<()> {
    let g = load_graph(&a.input)?;
    let summary = g.summary();
    let profile = g.neighborhood_profile(a.s_max, a.moments);
    let bandwidth = bandwidth_rule(summary.apl, summary.n, summary.avg_degree, a.k, a.literal_bandwidth_rule);
    if let Some(w) = &bandwidth.warning {
        eprintln!("warning: {w}");
    }
    emit_json(a.out.as_deref(), &Diagnosis { summary, profile, bandwidth })
}

fn mc(a: McArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| Error::input(format!("cannot read config {}: {e}", a.config.display())))?;
    let mut cfg: McConfig = serde_json::from_str(&text).map_err(|e| Error::input(format!("config: {e}")))?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.reps {
        cfg.reps = r;
    }
    let report = run_mc(&cfg)?;
    if let Some(p) = &a.csv {
        report.write_csv(File::create(p)?)?;
    }
    emit_json(a.out.as_deref(), &report)
}

fn oracle(a: OracleArgs) -> Result<()> {
    let g = load_graph(&a.input)?;
    let n = g.n();
    let design = match &a.units {
        Some(p) => {
            let rows = load_units(p)?;
            if rows.len() != n {
                return Err(Error::input(format!("units file has {} rows but the graph has {n} nodes", rows.len())));
            }
            io::design_from_units(&rows, a.p)?
        }
        None => Design::bernoulli(n, &(0..n).collect::<Vec<_>>(), a.p)?,
    };
    let eps = draw_epsilon(n, EpsilonMode::Normal, None, a.seed, 0)?;
    let model = a.model.with_epsilon(eps);
    let opts = OracleOptions { t: a.t, t0: a.t0, b: a.b.unwrap_or(2 * a.exposure.radius()), units: None };
    let ex = exact_estimands(&model, &design, &a.exposure, &g, &opts)?;
    emit_json(a.out.as_deref(), &ex)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_syntax() {
        assert_eq!(parse_sweep("0..3").unwrap(), 0..=3);
        assert_eq!(parse_sweep("1..=2").unwrap(), 1..=2);
        assert!(parse_sweep("3..1").is_err());
        assert!(parse_sweep("x").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(dispatch(["interfere", "diagnose", "--bogus"]), 1);
        assert_eq!(dispatch(["interfere"]), 1);
        assert_eq!(dispatch(["interfere", "diagnose", "--help"]), 0);
    }

    #[test]
    fn design_strings() {
        assert_eq!(parse_design("blocks:0.25").unwrap(), ("blocks", 0.25));
        assert!(parse_design("bernoulli:2").is_err());
        assert!(parse_design("coin:0.5").is_err());
    }
}
