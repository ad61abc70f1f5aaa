use std::path::{Path, PathBuf};

use interfere::cli::dispatch;
use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["interfere"];
    argv.extend_from_slice(args);
    dispatch(argv)
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

#[test]
fn diagnose_path() {
    let dir = TempDir::new().unwrap();
    let g = p(&dir, "g.txt");
    std::fs::write(&g, "0 1\n1 2\n").unwrap();
    let out = p(&dir, "d.json");
    assert_eq!(run(&["diagnose", "--graph", s(&g), "--out", s(&out)]), 0);
    let v = json(&out);
    assert!((f(&v["summary"]["apl"]) - 4.0 / 3.0).abs() < 1e-11);
    // tiny graph: the 2K floor wins
    assert_eq!(v["bandwidth"]["b"], 2);
    assert!((f(&v["profile"]["boundary_mean"][1]) - 4.0 / 3.0).abs() < 1e-11);
}

/// Star with center 0 and three leaves, all eligible with p = 1/2.
fn star_units(dir: &TempDir) -> (PathBuf, PathBuf, [f64; 4], [u8; 4]) {
    let g = p(dir, "star.txt");
    std::fs::write(&g, "0 1\n0 2\n0 3\n").unwrap();
    let y = [1.5, -0.5, 2.0, 0.25];
    let d = [0u8, 1, 0, 0];
    let mut text = String::from("id,outcome,treatment,eligible,block\n");
    for i in 0..4 {
        text += &format!("{i},{},{},1,\n", y[i], d[i]);
    }
    let u = p(dir, "units.csv");
    std::fs::write(&u, text).unwrap();
    (g, u, y, d)
}

#[test]
fn zero_bandwidth_is_sample_variance() {
    let dir = TempDir::new().unwrap();
    let (g, u, y, d) = star_units(&dir);
    let out = p(&dir, "e.json");
    let code = run(&[
        "estimate", "--graph", s(&g), "--units", s(&u), "--exposure", "any-nbr", "--t", "1", "--t0", "0",
        "--bandwidth", "0", "--variance", "hac,naive", "--out", s(&out),
    ]);
    assert_eq!(code, 0);
    let v = json(&out);
    // exposures: center sees leaf 1; leaves see the untreated center
    let t = [1u8, 0, 0, 0];
    let pi1 = [1.0 - 0.125, 0.5, 0.5, 0.5];
    let z: Vec<f64> = (0..4)
        .map(|i| if t[i] == 1 { y[i] / pi1[i] } else { -y[i] / (1.0 - pi1[i]) })
        .collect();
    let tau = z.iter().sum::<f64>() / 4.0;
    let var = z.iter().map(|x| (x - tau).powi(2)).sum::<f64>() / 4.0;
    assert!((f(&v["tau"]) - tau).abs() < 1e-9);
    assert!((f(&v["variance"]["hac"]["sigma2"]) - var).abs() < 1e-9 * var);
    assert!((f(&v["variance"]["naive"]["sigma2"]) - var).abs() < 1e-9 * var);
    assert_eq!(v["bandwidth"], 0);
    let _ = d;
}

#[test]
fn auto_bandwidth_from_summary_inputs() {
    let dir = TempDir::new().unwrap();
    let (g, u, _, _) = star_units(&dir);
    let out = p(&dir, "e.json");
    let code = run(&[
        "estimate", "--graph", s(&g), "--units", s(&u), "--bandwidth", "auto", "--apl", "3.37", "--avg-degree", "7.96",
        "--summary-n", "3306", "--out", s(&out),
    ]);
    assert_eq!(code, 0);
    let v = json(&out);
    assert_eq!(v["bandwidth"], 2);
    assert_eq!(v["regime"], "exponential");
}

#[test]
fn generated_graph_round_trips() {
    let dir = TempDir::new().unwrap();
    let g = p(&dir, "g.txt");
    assert_eq!(run(&["gen-graph", "--model", "configuration", "--schools", "1", "--seed", "9", "--out", s(&g)]), 0);
    let u = p(&dir, "u.csv");
    assert_eq!(
        run(&["simulate", "--graph", s(&g), "--model", "lim:0,0.5,1,1", "--seed", "2", "--eligible-fraction", "0.2", "--out", s(&u)]),
        0
    );
    let (e, d) = (p(&dir, "e.json"), p(&dir, "d.json"));
    assert_eq!(run(&["estimate", "--graph", s(&g), "--units", s(&u), "--out", s(&e)]), 0);
    assert_eq!(run(&["diagnose", "--graph", s(&g), "--out", s(&d)]), 0);
    assert_eq!(json(&e)["summary"], json(&d)["summary"]);
    assert_eq!(json(&d)["summary"]["n"], 805);
}

#[test]
fn stochastic_commands_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let mut outs = Vec::new();
    for (k, threads) in ["1", "3"].iter().enumerate() {
        let g = p(&dir, &format!("g{k}.txt"));
        let pos = p(&dir, &format!("pos{k}.csv"));
        let u = p(&dir, &format!("u{k}.csv"));
        let e = p(&dir, &format!("e{k}.json"));
        assert_eq!(
            run(&["--threads", threads, "gen-graph", "--model", "rgg", "--n", "300", "--kappa", "6", "--seed", "4", "--out", s(&g), "--positions", s(&pos)]),
            0
        );
        assert_eq!(
            run(&["simulate", "--graph", s(&g), "--model", "contagion:-1,1.5,1,1", "--epsilon", "homophily", "--positions", s(&pos),
                "--design", "blocks:0.5", "--eligible-fraction", "0.3", "--seed", "5", "--out", s(&u)]),
            0
        );
        assert_eq!(
            run(&["--threads", threads, "estimate", "--graph", s(&g), "--units", s(&u), "--variance", "hac,as,naive",
                "--propensity-reps", "20000", "--seed", "1", "--out", s(&e)]),
            0
        );
        outs.push((std::fs::read(&g).unwrap(), std::fs::read(&u).unwrap(), std::fs::read(&e).unwrap()));
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn monte_carlo_propensities_need_a_seed() {
    let dir = TempDir::new().unwrap();
    let (g, u, _, _) = star_units(&dir);
    let base = ["estimate", "--graph", s(&g), "--units", s(&u), "--exposure", "frac-nbr:0,0.5,1", "--sample", "all"];
    assert_eq!(run(&base), 1);
    let mut with_seed = base.to_vec();
    with_seed.extend(["--seed", "3", "--propensity-reps", "20000", "--t", "1", "--t0", "0", "--out", "/dev/null"]);
    assert_eq!(run(&with_seed), 0);
}

#[test]
fn sweep_table_and_json() {
    let dir = TempDir::new().unwrap();
    let (g, u, _, _) = star_units(&dir);
    let out = p(&dir, "e.json");
    assert_eq!(run(&["estimate", "--graph", s(&g), "--units", s(&u), "--bandwidth-sweep", "0..3", "--out", s(&out)]), 0);
    let v = json(&out);
    assert_eq!(v["sweep"].as_array().unwrap().len(), 4);
    assert_eq!(v["sweep"][2]["b"], 2);
}

#[test]
fn oracle_and_exit_codes() {
    let dir = TempDir::new().unwrap();
    let g = p(&dir, "g.txt");
    std::fs::write(&g, "0 1\n1 2\n2 3\n3 4\n").unwrap();
    let out = p(&dir, "o.json");
    assert_eq!(run(&["oracle", "--graph", s(&g), "--model", "lim:0,0.5,1,1", "--seed", "1", "--out", s(&out)]), 0);
    let v = json(&out);
    assert_eq!(v["support_size"], 32);
    assert!((f(&v["expected_tau_hat"]) - f(&v["tau"])).abs() < 1e-9);

    // 2^24 assignments is beyond the enumeration cap
    let big = p(&dir, "big.txt");
    let edges: String = (0..23).map(|i| format!("{i} {}\n", i + 1)).collect();
    std::fs::write(&big, edges).unwrap();
    assert_eq!(run(&["oracle", "--graph", s(&big), "--model", "lim:0,0.5,1,1", "--seed", "1", "--out", s(&out)]), 2);

    assert_eq!(run(&["oracle", "--graph", s(&g), "--model", "lim:0,1.5,1,1", "--seed", "1"]), 1);
    assert_eq!(run(&["estimate", "--unknown-flag"]), 1);
    assert_eq!(run(&["diagnose", "--graph", "/nonexistent/file"]), 1);
    assert_eq!(run(&["gen-graph", "--model", "rgg", "--n", "10", "--kappa", "2"]), 1);
}

#[test]
fn mc_subcommand() {
    let dir = TempDir::new().unwrap();
    let cfg = p(&dir, "mc.json");
    std::fs::write(
        &cfg,
        r#"{"network": {"model": "configuration", "schools": 1},
            "outcome": {"model": "lim:0,0.5,1,1"},
            "reps": 6, "oracle_reps": 6, "seed": 3}"#,
    )
    .unwrap();
    let (out, csv) = (p(&dir, "r.json"), p(&dir, "r.csv"));
    assert_eq!(run(&["mc", "--config", s(&cfg), "--out", s(&out), "--csv", s(&csv)]), 0);
    let v = json(&out);
    assert_eq!(v["reps"], 6);
    assert!(std::fs::read_to_string(&csv).unwrap().lines().count() >= 2);
    std::fs::write(&cfg, r#"{"network": {"model": "configuration", "schools": 1}, "outcome": {}, "reps": 1, "seed": 0, "typo": 1}"#).unwrap();
    assert_eq!(run(&["mc", "--config", s(&cfg)]), 1);
}
