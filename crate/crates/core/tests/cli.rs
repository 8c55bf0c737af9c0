use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn frakra(args: &[&str]) -> Output {
    frakra_env(args, None)
}

fn frakra_env(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_frakra"));
    cmd.args(args).env_remove("FRAKRA_THREADS");
    if let Some(t) = threads {
        cmd.env("FRAKRA_THREADS", t);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Every non-integer number token carries 17 significant digits.
fn assert_seventeen_digits(text: &str) {
    let mut seen = 0;
    for tok in text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '+')) {
        let Some((mantissa, exp)) = tok.split_once('e') else { continue };
        if exp.parse::<i32>().is_err() || mantissa.parse::<f64>().is_err() {
            continue;
        }
        let digits = mantissa.chars().filter(|c| c.is_ascii_digit()).count();
        assert_eq!(digits, 17, "{tok}");
        seen += 1;
    }
    assert!(seen > 0, "no floats in output");
}

#[test]
fn constants_json_envelope() {
    let o = frakra(&["constants", "--s", "0.5", "--q", "2", "--json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["tool"], "frakra");
    assert!(v["result"]["gamma"].as_f64().unwrap() > 0.0);
    assert!(v["checks"].as_array().unwrap().is_empty());
    assert_seventeen_digits(&text);
}

#[test]
fn text_and_csv_use_seventeen_digits() {
    for fmt in [None, Some("--csv")] {
        let mut args = vec!["asymmetry", "ellipse:a=0.6,b=0.3", "--res", "32"];
        args.extend(fmt);
        let o = frakra(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert_seventeen_digits(&stdout(&o));
    }
}

#[test]
fn input_errors_exit_two() {
    let cases: &[&[&str]] = &[
        &["constants", "--s", "1.5"],
        &["constants", "--s", "0.5", "--q", "0.5"],
        &["asymmetry", "hexagon:side=0.3"],
        &["asymmetry", "disk:radius=0.5", "--res", "17"],
        &["eigen", "disk:radius=0.5", "--s", "0.5", "--tol", "2"],
        &["rearrange", "/nonexistent/u.csv"],
        &["constants", "--s", "0.5", "--json", "--csv"],
        &["sweep", "--family", "ellipse", "--values", "1", "--s", "0.5"],
        &["frobnicate"],
    ];
    for args in cases {
        let o = frakra(args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
    }
    let o = frakra_env(&["constants", "--s", "0.5"], Some("many"));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("FRAKRA_THREADS"));
}

#[test]
fn help_exits_zero() {
    let o = frakra(&["--help"]);
    assert_eq!(code(&o), 0);
    for sub in ["constants", "shape", "asymmetry", "eigen", "torsion", "rearrange", "extend", "verify-fk", "sweep", "limits"] {
        assert!(stdout(&o).contains(sub), "{sub}");
    }
}

#[test]
fn failed_checks_exit_one() {
    // a loose tolerance leaves the minimizer visibly off the Lanczos value
    let o = frakra(&["eigen", "disk:radius=0.5", "--s", "0.5", "--res", "32", "--tol", "0.05", "--cross-check"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("assertion failed: lanczos_agreement"));
    let o = frakra(&["eigen", "disk:radius=0.5", "--s", "0.5", "--res", "32", "--cross-check"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn verify_passes_on_an_ellipse() {
    let o = frakra(&["verify-fk", "ellipse:a=0.6,b=0.3", "--s", "0.5", "--q", "2", "--res", "48", "--json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["result"]["deficit"].as_f64().unwrap() > 0.0);
    let checks = v["checks"].as_array().unwrap();
    assert!(checks.iter().all(|c| c["pass"] == true));
    assert!(checks.iter().any(|c| c["name"] == "faber_krahn"));
}

#[test]
fn outputs_do_not_depend_on_the_thread_count() {
    let args = ["sweep", "--family", "ellipse", "--values", "1,1.5,2", "--s", "0.4,0.6", "--q", "2", "--res", "32", "--no-scan"];
    let base = frakra(&[&args[..], &["--threads", "1"]].concat());
    assert_eq!(code(&base), 0, "{}", stderr(&base));
    assert_eq!(stdout(&base).lines().count(), 7);
    let wide = frakra(&[&args[..], &["--threads", "4"]].concat());
    assert_eq!(base.stdout, wide.stdout);
    let env = frakra_env(&args, Some("3"));
    assert_eq!(base.stdout, env.stdout);
    // the flag wins over the environment
    let both = frakra_env(&[&args[..], &["--threads", "2"]].concat(), Some("zzz"));
    assert_eq!(code(&both), 0, "{}", stderr(&both));
    assert_eq!(base.stdout, both.stdout);

    let eig = ["eigen", "stadium:length=0.4,radius=0.3", "--s", "0.6", "--q", "3", "--res", "32", "--json"];
    let a = frakra(&[&eig[..], &["--threads", "1"]].concat());
    let b = frakra(&[&eig[..], &["--threads", "5"]].concat());
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn files_flow_between_commands() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let (mask, u, star, field, report) = (p("s.shape"), p("u.csv"), p("star.csv"), p("f.bin"), p("r.json"));

    let o = frakra(&["shape", "stadium:length=0.5,radius=0.3", "--res", "32", "--out", &mask]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(Path::new(&mask).exists());

    let o = frakra(&["eigen", &mask, "--s", "0.5", "--out", &u]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let o = frakra(&["rearrange", &u, "--s", "0.5", "--out", &star, "--json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["result"]["equimeasurable"], true);
    assert!(v["result"]["seminorm_sq_rearranged"].as_f64().unwrap() <= v["result"]["seminorm_sq"].as_f64().unwrap());

    let o = frakra(&["extend", &star, "--s", "0.5", "--levels", "24", "--out", &field, "--json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(std::fs::metadata(&field).unwrap().len() > 0);

    let o = frakra(&["asymmetry", &mask, "--json", "--out", &report]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(v["result"]["asymmetry"].as_f64().unwrap() > 0.0);

    let o = frakra(&["torsion", &mask, "--s", "0.5", "--verify", "--json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn limits_table_has_frozen_columns() {
    let o = frakra(&["limits", "--mode", "s", "disk:radius=0.6", "--res", "32", "--values", "0.7,0.8,0.9", "--csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("s,lambda,scaled,target,gap"));
    assert_eq!(lines.count(), 3);
}
