use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use micdt_core::{load_model, SvarModel};
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn micdt(args: &[&str]) -> Output {
    micdt_env(args, &[])
}

fn micdt_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_micdt"));
    cmd.args(args).env_remove("MICDT_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn fit_on_bundled_fixture_writes_valid_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("model.json");
    let res = micdt(&[
        "fit",
        "--input",
        p(&fixture("synthetic4.csv")),
        "--lags",
        "1",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let model = load_model(&out).unwrap();
    model.validate().unwrap();
    assert_eq!(model.channels, ["b1", "b2", "b3", "b4"]);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["schema_version"], "1");
    for key in [
        "channels",
        "order",
        "s0",
        "causal_order",
        "lagged",
        "uncorrected_lagged",
        "noise_variances",
        "preprocessing",
        "fit_meta",
    ] {
        assert!(v.get(key).is_some(), "{key}");
    }
    let run = &v["fit_meta"]["run_config"];
    assert_eq!(run["lags"], "1");
    assert_eq!(run["method"], "ols");
    assert_eq!(run["seed"], "0");
}

#[test]
fn fit_with_three_lags() {
    let res = micdt(&[
        "fit",
        "--input",
        p(&fixture("synthetic4.csv")),
        "--lags",
        "3",
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let model = SvarModel::from_json(&stdout(&res)).unwrap();
    assert_eq!(model.order, 3);
    assert_eq!(model.lagged.len(), 3);
}

#[test]
fn fit_with_kalman_method() {
    let res = micdt(&[
        "fit",
        "--input",
        p(&fixture("synthetic4.csv")),
        "--lags",
        "1",
        "--method",
        "kalman",
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let v: Value = serde_json::from_str(&stdout(&res)).unwrap();
    assert_eq!(v["fit_meta"]["method"], "kalman");
}

#[test]
fn fit_is_byte_deterministic() {
    let input = fixture("synthetic4.csv");
    let args = ["fit", "--input", p(&input), "--lags", "2", "--seed", "5"];
    assert_eq!(micdt(&args).stdout, micdt(&args).stdout);
}

#[test]
fn missing_input_exits_one() {
    let res = micdt(&["fit", "--input", "/no/such/file.csv", "--lags", "1"]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("file not found"), "{}", stderr(&res));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&micdt(&["fit", "--lags", "1"])), 1);
    assert_eq!(
        code(&micdt(&["fit", "--input", "x.csv", "--lags", "many"])),
        1
    );
    assert_eq!(code(&micdt(&["frobnicate"])), 1);
    assert_eq!(code(&micdt(&["--help"])), 0);
}

#[test]
fn numerical_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("a,b\n");
    for t in 0..500 {
        let x = ((t * 7919) % 113) as f64 - 56.0;
        csv.push_str(&format!("{x},{}\n", 2.0 * x));
    }
    let input = write(dir.path(), "collinear.csv", &csv);
    let res = micdt(&["fit", "--input", &input, "--lags", "1"]);
    assert_eq!(code(&res), 2, "{}", stderr(&res));

    let model = write(
        dir.path(),
        "cyclic.json",
        r#"{"schema_version":"1","channels":["a","b"],"order":1,"s0":[[0,1],[1,0]],"lagged":[[[0,0],[0,0]]]}"#,
    );
    let res = micdt(&["simulate", "--model", &model, "--samples", "10"]);
    assert_eq!(code(&res), 2, "{}", stderr(&res));
}

/// Simulates `model_json` through the CLI and returns the CSV path.
fn simulated(dir: &Path, name: &str, model_json: &str, samples: usize, seed: u64) -> String {
    let model = write(dir, &format!("{name}.json"), model_json);
    let out = dir.join(format!("{name}.csv"));
    let res = micdt(&[
        "simulate",
        "--model",
        &model,
        "--samples",
        &samples.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    out.to_str().unwrap().to_string()
}

fn granger_rows(csv: &str) -> Vec<(String, String, f64)> {
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("source,target,var_restricted,var_full,f_value")
    );
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].to_string(), f[4].parse().unwrap())
        })
        .collect()
}

#[test]
fn granger_on_independent_channels() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulated(
        dir.path(),
        "indep",
        r#"{"schema_version":"1","channels":["y1","y2"],"order":1,"s0":[[0,0],[0,0]],"lagged":[[[0,0],[0,0]]]}"#,
        10000,
        3,
    );
    let res = micdt(&["granger", "--input", &input, "--lags", "1"]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let rows = granger_rows(&stdout(&res));
    assert_eq!(rows.len(), 2);
    for (s, t, f) in rows {
        assert!((0.0..0.01).contains(&f), "{s}->{t}: {f}");
    }
}

#[test]
fn granger_on_driven_pair() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulated(
        dir.path(),
        "driven",
        r#"{"schema_version":"1","channels":["y1","y2"],"order":1,"s0":[[0,0],[0,0]],
            "lagged":[[[0,0.9],[0,0]]],"noise_variances":[0.01,1]}"#,
        10000,
        4,
    );
    let res = micdt(&[
        "granger",
        "--input",
        &input,
        "--lags",
        "1",
        "--pairs",
        "y2:y1,y1:y2",
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let rows = granger_rows(&stdout(&res));
    assert_eq!((rows[0].0.as_str(), rows[0].1.as_str()), ("y2", "y1"));
    assert!(rows[0].2 > 1.0, "forward {}", rows[0].2);
    assert!(rows[1].2 < 0.05, "reverse {}", rows[1].2);

    let pretty = micdt(&["granger", "--input", &input, "--lags", "1", "--pretty"]);
    let text = stdout(&pretty);
    assert!(text.lines().next().unwrap().starts_with("source  target"));
    assert!(!text.contains(','));
}

#[test]
fn granger_self_pair_exits_one() {
    let res = micdt(&[
        "granger",
        "--input",
        p(&fixture("synthetic4.csv")),
        "--lags",
        "1",
        "--pairs",
        "b1:b1",
    ]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("same channel"), "{}", stderr(&res));
}

#[test]
fn graph_single_structural_edge() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(
        dir.path(),
        "m.json",
        r#"{"schema_version":"1","channels":["ch1","ch2"],"order":1,"s0":[[0,0],[0.8,0]],"lagged":[[[0,0],[0,0]]]}"#,
    );
    let res = micdt(&["graph", "--model", &model, "--threshold", "0.05"]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let dot = stdout(&res);
    let edges: Vec<&str> = dot.lines().filter(|l| l.contains("->")).collect();
    assert_eq!(edges.len(), 1, "{dot}");
    assert!(edges[0].contains("\"t_structural:ch1\" -> \"t_structural:ch2\""));
    assert!(edges[0].contains("color=blue") && edges[0].contains("style=solid"));
    graphviz_rust::parse(&dot).expect("DOT parses");

    let res = micdt(&["graph", "--model", &model, "--format", "json"]);
    let v: Value = serde_json::from_str(&stdout(&res)).unwrap();
    let edges = v["edges"].as_array().unwrap();
    assert_eq!(edges.len(), 1);
    assert_eq!(edges[0]["kind"], "structural");
    assert_eq!(edges[0]["sign"], "positive");
    assert_eq!(edges[0]["weight"], 0.8);
    assert_eq!(v["run_config"]["format"], "json");
}

#[test]
fn graph_of_order_three_fit_has_twenty_nodes() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    let res = micdt(&[
        "fit",
        "--input",
        p(&fixture("synthetic4.csv")),
        "--lags",
        "3",
        "--out",
        p(&model),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    for extra in [&[][..], &["--uncorrected"][..], &["--raw-units"][..]] {
        let mut args = vec!["graph", "--model", p(&model), "--format", "json"];
        args.extend_from_slice(extra);
        let res = micdt(&args);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
        let v: Value = serde_json::from_str(&stdout(&res)).unwrap();
        assert_eq!(v["nodes"].as_array().unwrap().len(), 20);
        assert_eq!(v["columns"].as_array().unwrap().len(), 5);
    }
    let a = micdt(&["graph", "--model", p(&model)]);
    let b = micdt(&["graph", "--model", p(&model)]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn graph_with_zero_model_keeps_grid() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(
        dir.path(),
        "z.json",
        r#"{"schema_version":"1","channels":["a","b","c"],"order":2,"s0":[[0,0,0],[0,0,0],[0,0,0]],
            "lagged":[[[0,0,0],[0,0,0],[0,0,0]],[[0,0,0],[0,0,0],[0,0,0]]]}"#,
    );
    let res = micdt(&["graph", "--model", &model, "--format", "json"]);
    let v: Value = serde_json::from_str(&stdout(&res)).unwrap();
    assert_eq!(v["nodes"].as_array().unwrap().len(), 12);
    assert!(v["edges"].as_array().unwrap().is_empty());
}

#[test]
fn simulate_then_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim.csv");
    let truth_path = fixture("synthetic4_model.json");
    let res = micdt(&[
        "simulate",
        "--model",
        p(&truth_path),
        "--samples",
        "20000",
        "--seed",
        "11",
        "--out",
        p(&sim),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let res = micdt(&["fit", "--input", p(&sim), "--lags", "1"]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let fit = SvarModel::from_json(&stdout(&res)).unwrap().in_raw_units();
    let truth = load_model(&truth_path).unwrap();
    let s0 = (&fit.s0.s0 - &truth.s0.s0).amax();
    let s1 = (&fit.lagged[0] - &truth.lagged[0]).amax();
    assert!(s0 < 0.05 && s1 < 0.05, "s0 err {s0}, S1 err {s1}");
}

#[test]
fn simulate_is_deterministic_and_seeded() {
    let m = fixture("synthetic4_model.json");
    let args = |seed: &'static str| {
        [
            "simulate",
            "--model",
            p(&m),
            "--samples",
            "200",
            "--seed",
            seed,
        ]
        .map(String::from)
    };
    let run = |a: [String; 7]| micdt(&a.iter().map(String::as_str).collect::<Vec<_>>()).stdout;
    assert_eq!(run(args("1")), run(args("1")));
    assert_ne!(run(args("1")), run(args("2")));
}

#[test]
fn malformed_edit_exits_one_with_hint() {
    let m = fixture("synthetic4_model.json");
    let res = micdt(&[
        "counterfactual",
        "--model",
        p(&m),
        "--samples",
        "500",
        "--edit",
        "structural:b1-b2=0",
    ]);
    assert_eq!(code(&res), 1);
    assert!(
        stderr(&res).contains("expected structural:SRC->DST=V"),
        "{}",
        stderr(&res)
    );
}

#[test]
fn counterfactual_without_edits_reports_baseline_only() {
    let m = fixture("synthetic4_model.json");
    let res = micdt(&["counterfactual", "--model", p(&m), "--samples", "1000"]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let v: Value = serde_json::from_str(&stdout(&res)).unwrap();
    assert_eq!(v["baseline"]["variances"].as_array().unwrap().len(), 4);
    assert!(v["scenarios"].as_array().unwrap().is_empty());
}

#[test]
fn counterfactual_scenarios_per_edit_or_combined() {
    let m = fixture("synthetic4_model.json");
    let edits = ["--edit", "structural:b1->b2=0", "--edit", "lag1:b4->b1=0.3"];
    let mut args = vec!["counterfactual", "--model", p(&m), "--samples", "2000"];
    args.extend_from_slice(&edits);
    let v: Value = serde_json::from_str(&stdout(&micdt(&args))).unwrap();
    let scenarios = v["scenarios"].as_array().unwrap();
    assert_eq!(scenarios.len(), 2);
    assert_eq!(
        scenarios[0]["interventions"][0]["kind"],
        "zero_structural_edge"
    );
    assert_eq!(scenarios[1]["interventions"][0]["kind"], "set_edge");
    assert!(scenarios[0]["deltas"]["variances"][1].as_f64().unwrap() < 0.0);

    args.push("--combine");
    let v: Value = serde_json::from_str(&stdout(&micdt(&args))).unwrap();
    assert_eq!(v["scenarios"].as_array().unwrap().len(), 1);
    assert_eq!(
        v["scenarios"][0]["interventions"].as_array().unwrap().len(),
        2
    );
}

#[test]
fn seed_precedence_flag_config_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "seed = 21\nsamples = 300\n");
    let m = fixture("synthetic4_model.json");
    let seed_of = |args: &[&str], env: &[(&str, &str)]| -> String {
        let res = micdt_env(args, env);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
        let v: Value = serde_json::from_str(&stdout(&res)).unwrap();
        v["run_config"]["seed"].as_str().unwrap().to_string()
    };
    let base = ["counterfactual", "--model", p(&m), "--samples", "300"];
    assert_eq!(seed_of(&base, &[]), "0");
    assert_eq!(seed_of(&base, &[("MICDT_SEED", "9")]), "9");
    let with_cfg = ["counterfactual", "--model", p(&m), "--config", &cfg];
    assert_eq!(seed_of(&with_cfg, &[("MICDT_SEED", "9")]), "21");
    let with_flag = [
        "counterfactual",
        "--model",
        p(&m),
        "--config",
        &cfg,
        "--seed",
        "4",
    ];
    assert_eq!(seed_of(&with_flag, &[("MICDT_SEED", "9")]), "4");
}

#[test]
fn config_file_supplies_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("synthetic4.csv");
    let toml_cfg = write(
        dir.path(),
        "fit.toml",
        &format!(
            "input = {:?}\nlags = 1\n[fit]\nlags = 2\nprune_threshold = 0.1\n",
            p(&input)
        ),
    );
    let res = micdt(&["fit", "--config", &toml_cfg]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let m = SvarModel::from_json(&stdout(&res)).unwrap();
    assert_eq!(m.order, 2);
    assert_eq!(m.fit_meta.prune_threshold, 0.1);

    let res = micdt(&["fit", "--config", &toml_cfg, "--lags", "3"]);
    assert_eq!(SvarModel::from_json(&stdout(&res)).unwrap().order, 3);

    let json_cfg = write(
        dir.path(),
        "fit.json",
        &format!("{{\"input\": {:?}, \"lags\": 1}}", p(&input)),
    );
    let res = micdt(&["fit", "--config", &json_cfg]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let v: Value = serde_json::from_str(&stdout(&res)).unwrap();
    assert_eq!(v["fit_meta"]["run_config"]["config"], json_cfg.as_str());

    let bad = write(dir.path(), "bad.toml", "colour = \"red\"\n");
    let res = micdt(&["fit", "--config", &bad, "--input", p(&input), "--lags", "1"]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("unknown config key"));
}
