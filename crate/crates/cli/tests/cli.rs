use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_popdyn"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("run")
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn results(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("results.json")).unwrap()).unwrap()
}

#[test]
fn list_models_is_sorted_and_stable() {
    let a = bin().arg("list-models").output().unwrap();
    let b = bin().arg("list-models").output().unwrap();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    for name in ["hassell", "rps_lottery", "biennial"] {
        assert!(text.lines().any(|l| l == name), "missing {name}");
    }
    let names: Vec<&str> = text.lines().filter(|l| !l.starts_with(' ')).collect();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
    assert_eq!(text.matches("env wiring:").count(), names.len());
}

#[test]
fn malformed_probabilities_exit_2_without_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.json",
        r#"{"model": {"model": "hassell",
                      "lambda": {"dist": "discrete", "values": [1.0, 2.0], "probs": [0.5, 0.4]},
                      "b": 1.0},
            "task": "classify"}"#,
    );
    let out = tmp.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("results.json").exists());
    assert!(!out.join("results.csv").exists());
}

#[test]
fn unknown_key_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"task": "gamma", "taks_params": {}}"#);
    assert_eq!(run(&cfg, &tmp.path().join("o"), &[]).status.code(), Some(2));
    let cfg = write_config(
        tmp.path(),
        "d.json",
        r#"{"model": {"model": "lottery", "d": 0.1, "fecundity": [1.0, 1.0]},
            "task": "simulate", "task_params": {"setz": []}}"#,
    );
    assert_eq!(run(&cfg, &tmp.path().join("o"), &[]).status.code(), Some(2));
}

#[test]
fn numeric_overflow_exit_3_without_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "boom.json",
        r#"{"model": {"model": "hassell", "lambda": 2.0, "b": 0.0},
            "sim": {"horizon": 5000, "burn_in": 10},
            "task": "simulate"}"#,
    );
    let out = tmp.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.join("results.json").exists());
}

#[test]
fn gamma_at_p0_is_ln_a() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "g.json",
        r#"{"task": "gamma", "task_params": {"p": 0.0, "a": 0.5, "theta": 2.0, "k": 1.0}}"#,
    );
    let out = tmp.path().join("out");
    assert!(run(&cfg, &out, &[]).status.success());
    let g = results(&out)["report"]["gamma_closed_form"].as_f64().unwrap();
    assert!((g - 0.5f64.ln()).abs() < 1e-15);
}

#[test]
fn classify_hassell_extinction() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "h.json",
        r#"{"model": {"model": "hassell",
                      "lambda": {"dist": "lognormal", "log_mean": -0.2, "log_sd": 0.3},
                      "b": 1.0},
            "sim": {"seed": 1, "replicates": 10, "burn_in": 100, "horizon": 5000},
            "task": "classify"}"#,
    );
    let out = tmp.path().join("out");
    assert!(run(&cfg, &out, &[]).status.success());
    let r = results(&out);
    assert_eq!(r["report"]["verdict"], "extinction");
    assert_eq!(r["provenance"]["seed"], 1);
    assert_eq!(r["provenance"]["config_sha256"].as_str().unwrap().len(), 64);
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.starts_with("task,quantity,species,face,mean,std_error,n,verdict\n"));
}

#[test]
fn overrides_change_the_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "r.json",
        r#"{"model": {"model": "rps_lottery", "d": 0.1, "alpha": 3.2, "beta": 2.0, "gamma": 1.0},
            "task": "rps", "task_params": {"n": 1000}}"#,
    );
    let out = tmp.path().join("out");
    let o = run(&cfg, &out, &["--set", "model.d=0.5", "--seed", "9"]);
    assert!(o.status.success());
    let r = results(&out);
    assert_eq!(r["config"]["model"]["d"], 0.5);
    assert_eq!(r["config"]["sim"]["seed"], 9);
    assert_eq!(r["report"]["exact_verdict"], "negative");
}

#[test]
fn csv_numbers_appear_in_json() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "p.json",
        r#"{"model": {"model": "ricker_competition",
                      "r": [{"dist": "normal", "mean": 1.0, "sd": 0.2},
                            {"dist": "normal", "mean": 0.8, "sd": 0.2}],
                      "alpha": [0.5, 0.6]},
            "sim": {"seed": 3, "replicates": 2, "burn_in": 500, "horizon": 5000},
            "task": "permanence", "task_params": {"dirac_draws": 2000}}"#,
    );
    let out = tmp.path().join("out");
    assert!(run(&cfg, &out, &[]).status.success());
    let json = fs::read_to_string(out.join("results.json")).unwrap();
    let doc: Value = serde_json::from_str(&json).unwrap();
    let mut numbers = Vec::new();
    collect(&doc, &mut numbers);
    let mut rdr = csv::Reader::from_path(out.join("results.csv")).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        for col in [4, 5] {
            if let Ok(v) = rec[col].parse::<f64>() {
                assert!(
                    numbers.iter().any(|x| (x - v).abs() <= 4.0 * f64::EPSILON * v.abs()),
                    "{} = {v} missing from results.json",
                    &rec[1]
                );
            }
        }
    }
}

fn collect(v: &Value, out: &mut Vec<f64>) {
    match v {
        Value::Number(n) => out.push(n.as_f64().unwrap()),
        Value::Array(a) => a.iter().for_each(|x| collect(x, out)),
        Value::Object(m) => m.values().for_each(|x| collect(x, out)),
        _ => {}
    }
}

#[test]
fn output_identical_across_threads_and_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "l.json",
        r#"{"model": {"model": "lottery", "d": 0.1, "fecundity": [
               {"dist": "lognormal", "log_mean": 1.0, "log_sd": 0.3},
               {"dist": "lognormal", "log_mean": 1.0, "log_sd": 0.3},
               {"dist": "lognormal", "log_mean": 1.0, "log_sd": 0.3}]},
            "sim": {"seed": 11, "replicates": 6, "burn_in": 200, "horizon": 3000},
            "task": "permanence", "task_params": {"dirac_draws": 2000}}"#,
    );
    let dirs: Vec<PathBuf> = (0..3).map(|i| tmp.path().join(format!("o{i}"))).collect();
    assert!(run(&cfg, &dirs[0], &["--threads", "1"]).status.success());
    assert!(run(&cfg, &dirs[1], &["--threads", "4"]).status.success());
    assert!(run(&cfg, &dirs[2], &[]).status.success());
    for f in ["results.json", "results.csv"] {
        let a = fs::read(dirs[0].join(f)).unwrap();
        for d in &dirs[1..] {
            assert_eq!(a, fs::read(d.join(f)).unwrap(), "{f} differs");
        }
    }
}
