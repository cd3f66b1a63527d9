//! End-to-end tests of the `clusteriv` binary: exit codes, report contents
//! and byte-level determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_clusteriv"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Twelve pairs where the encouraged cluster has higher uptake and outcome.
fn pairs_csv(dir: &TempDir) -> PathBuf {
    let mut text = String::from("pair,slot,dose,n,sum_d,sum_r,xt1,xbar1\n");
    for k in 1..=12 {
        let n = 10 + k % 4;
        let enc_slot = 1 + k % 2;
        for slot in 1..=2 {
            let enc = slot == enc_slot;
            let dose = if enc {
                0.7 + 0.01 * k as f64
            } else {
                0.2 + 0.005 * k as f64
            };
            let sum_d = if enc { 6 + k % 3 } else { 2 + k % 2 };
            let sum_r = if enc {
                1.5 + 0.3 * (k % 5) as f64
            } else {
                0.4 + 0.2 * (k % 3) as f64
            };
            let xt = 0.1 * k as f64 + if enc { 0.05 } else { 0.0 };
            let xbar = (k as f64).sin() + if enc { 0.1 } else { -0.1 };
            text.push_str(&format!(
                "{k},{slot},{dose},{n},{sum_d},{sum_r},{xt},{xbar}\n"
            ));
        }
    }
    let path = dir.path().join("pairs.csv");
    std::fs::write(&path, text).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn acer_test_reports_a_decision() {
    let dir = TempDir::new().unwrap();
    let input = pairs_csv(&dir);
    let out = dir.path().join("acer.json");
    let o = run(&[
        "test",
        "acer",
        "--lambda0",
        "0",
        "--iota-min",
        "0.2",
        "--alpha",
        "0.05",
        "--design",
        "q2",
        "--in",
        path_str(&input),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let v = json(&out);
    assert_eq!(v["schema"], 1);
    let decision = v["result"]["decision"].as_str().unwrap();
    assert!(
        decision == "reject" || decision == "fail_to_reject",
        "{decision}"
    );
    assert_eq!(v["result"]["minimizing_co"]["certificate_only"], true);
    assert!(v["result"]["bound_trace"].is_array());
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let input = pairs_csv(&dir);
    let o = run(&[
        "test",
        "acer",
        "--lambda0",
        "0",
        "--alpha",
        "0.05",
        "--design",
        "q2",
        "--in",
        path_str(&input),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--iota-min"));
}

#[test]
fn unknown_flag_prints_usage_and_exits_one() {
    let o = run(&["test", "per", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn dose_tie_is_a_validation_failure_naming_the_pair() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("tie.csv");
    std::fs::write(
        &path,
        "pair,slot,dose,n,sum_d,sum_r\n1,1,0.8,10,6,2\n1,2,0.3,10,3,1\n7,1,0.5,10,5,2\n7,2,0.5,10,4,1\n",
    )
    .unwrap();
    let o = run(&["test", "sharp", "--in", path_str(&path)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("pair 7"), "{err}");
}

#[test]
fn alpha_outside_unit_interval_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let input = pairs_csv(&dir);
    let o = run(&[
        "test",
        "per",
        "--lambda0",
        "0",
        "--design",
        "e",
        "--alpha",
        "1.5",
        "--in",
        path_str(&input),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

fn strip_timing(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[test]
fn identical_inputs_give_identical_reports() {
    let dir = TempDir::new().unwrap();
    let input = pairs_csv(&dir);
    let mut texts = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("ci{i}.json"));
        let o = run(&[
            "ci",
            "acer",
            "--iota-min",
            "0.2",
            "--design",
            "e",
            "--grid",
            "-3:3:0.25",
            "--in",
            path_str(&input),
            "--out",
            path_str(&out),
        ]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        texts.push(serde_json::to_string(&strip_timing(json(&out))).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn sharp_and_per_commands_produce_reports() {
    let dir = TempDir::new().unwrap();
    let input = pairs_csv(&dir);
    let p = path_str(&input);
    let cases: Vec<Vec<&str>> = vec![
        vec![
            "test", "sharp", "--phi", "wilcoxon", "--beta0", "-0.5", "--in", p,
        ],
        vec![
            "ci",
            "sharp",
            "--phi",
            "sign",
            "--beta-grid",
            "-2:2:0.1",
            "--in",
            p,
        ],
        vec![
            "test",
            "per",
            "--lambda0",
            "0.1",
            "--design",
            "q1",
            "--in",
            p,
        ],
        vec![
            "ci",
            "per",
            "--design",
            "e",
            "--grid",
            "-2:2:0.05",
            "--in",
            p,
        ],
    ];
    for args in cases {
        let o = run(&args);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        let v: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["schema"], 1, "{args:?}");
    }
}

#[test]
fn dumped_problem_round_trips_through_solve_dump() {
    let dir = TempDir::new().unwrap();
    let input = pairs_csv(&dir);
    let dump = dir.path().join("problem.txt");
    let report = dir.path().join("acer.json");
    let o = run(&[
        "test",
        "acer",
        "--lambda0",
        "0.5",
        "--iota-min",
        "0.3",
        "--design",
        "e",
        "--in",
        path_str(&input),
        "--out",
        path_str(&report),
        "--dump-problem",
        path_str(&dump),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let o = run(&["solve-dump", "--in", path_str(&dump), "--mode", "sign"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let solved: Value = serde_json::from_slice(&o.stdout).unwrap();
    let tested = json(&report);
    let want = match tested["result"]["decision"].as_str().unwrap() {
        "reject" => "sign_positive",
        _ => solved["result"]["status"].as_str().unwrap(),
    };
    assert_eq!(solved["result"]["status"], want);
}

#[test]
fn exhausted_budget_exits_three() {
    let dir = TempDir::new().unwrap();
    let input = pairs_csv(&dir);
    let o = run(&[
        "test",
        "acer",
        "--lambda0",
        "0.5",
        "--iota-min",
        "0.3",
        "--design",
        "e",
        "--max-nodes",
        "0",
        "--in",
        path_str(&input),
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["result"]["decision"], "inconclusive");
}

#[test]
fn match_writes_pairs_and_balance() {
    let dir = TempDir::new().unwrap();
    let units = dir.path().join("units.csv");
    let mut text = String::from("cluster,dose,n,sum_d,sum_r,xt1\n");
    for i in 1..=10 {
        text.push_str(&format!(
            "{i},{},{},{},{},{}\n",
            0.05 * i as f64,
            10,
            i % 7,
            0.1 * i as f64,
            (i * 37 % 11) as f64
        ));
    }
    std::fs::write(&units, text).unwrap();
    let (pairs, balance) = (dir.path().join("pairs.csv"), dir.path().join("balance.csv"));
    let o = run(&[
        "match",
        "--in",
        path_str(&units),
        "--out",
        path_str(&pairs),
        "--balance",
        path_str(&balance),
        "--penalty",
        "5",
        "--dose-gap",
        "0.1",
        "--sinks",
        "2",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["result"]["pairs"], 4);
    assert_eq!(v["result"]["dropped_clusters"].as_array().unwrap().len(), 2);
    assert_eq!(std::fs::read_to_string(&pairs).unwrap().lines().count(), 9);
    assert!(std::fs::read_to_string(&balance)
        .unwrap()
        .starts_with("covariate,"));
    let o = run(&[
        "balance",
        "--in",
        path_str(&pairs),
        "--out",
        path_str(&dir.path().join("b2.csv")),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn simulations_write_csv_tables() {
    let dir = TempDir::new().unwrap();
    let acer_cfg = dir.path().join("acer.cfg");
    std::fs::write(&acer_cfg, "k = 20\nbeta = 1\nseed = 5\nks = 10, 20\n").unwrap();
    let out = dir.path().join("size.csv");
    let o = run(&[
        "simulate",
        "acer",
        "--config",
        path_str(&acer_cfg),
        "--reps",
        "5",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 6);
    let out = dir.path().join("timing.csv");
    let o = run(&[
        "simulate",
        "timing",
        "--config",
        path_str(&acer_cfg),
        "--reps",
        "3",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 3);
    let conf_cfg = dir.path().join("confound.cfg");
    std::fs::write(&conf_cfg, "clusters = 20\nn = 4\nblock = 10\n").unwrap();
    let out = dir.path().join("coverage.csv");
    let o = run(&[
        "simulate",
        "confound",
        "--config",
        path_str(&conf_cfg),
        "--reps",
        "4",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let table = std::fs::read_to_string(&out).unwrap();
    assert!(
        table.contains("individual,20,4") && table.contains("cluster,20,4"),
        "{table}"
    );
}

#[test]
fn bad_config_key_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "kay = 3\n").unwrap();
    let o = run(&[
        "simulate",
        "acer",
        "--config",
        path_str(&cfg),
        "--reps",
        "2",
        "--out",
        path_str(&dir.path().join("x.csv")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}
