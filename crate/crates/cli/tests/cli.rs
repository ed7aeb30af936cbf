use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn exc(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_exc"));
    c.args(args).env_remove("EXC_SEED");
    if let Some(s) = env_seed {
        c.env("EXC_SEED", s);
    }
    let out = c.output().expect("spawn exc");
    assert!(out.status.success(), "exc {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("exc-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Runs the command twice into two directories and compares every file.
fn twice(name: &str, args: impl Fn(&Path) -> Vec<String>) -> PathBuf {
    let (a, b) = (scratch(&format!("{name}-a")), scratch(&format!("{name}-b")));
    for d in [&a, &b] {
        let v = args(d);
        exc(&v.iter().map(String::as_str).collect::<Vec<_>>(), None);
    }
    let mut files: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert!(!files.is_empty());
    for f in files {
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{name}: {f:?} differs");
    }
    a
}

fn v(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|x| x.to_string()).collect()
}

#[test]
fn grid_graph_scf_fci_are_byte_deterministic() {
    let d = twice("grid", |d| v(&["grid", "build", "--h2", "1.5", "-o", s(&d.join("g.json"))]));
    let g = json(&d.join("g.json"));
    assert_eq!(g["config"]["geometry"]["s"], 1.5);
    assert!((g["grid"]["weight_sum"].as_f64().unwrap() > 0.0));

    let d = twice("graph", |d| v(&["graph", "build", "--chain", "2", "--seed", "4", "--alpha", "0.7", "-o", s(&d.join("g.json"))]));
    let g = json(&d.join("g.json"));
    assert_eq!(g["config"]["graph"]["alpha"], 0.7);
    assert_eq!(g["config"]["graph"]["seed"], 4);
    assert!(g["graph"]["edges"].as_array().unwrap().len() == g["graph"]["total_edges"].as_u64().unwrap() as usize);

    let d = twice("validate", |d| v(&["graph", "validate", "--instances", "2", "--n-vertices", "500", "-o", s(&d.join("v.json"))]));
    assert_eq!(json(&d.join("v.json"))["validation"]["all_pass"], true);

    let d = twice("scf", |d| v(&["scf", "run", "--h2", "1.0", "--xc", "exphormer-pw92", "--mode", "uks", "--seed", "5", "--json", s(&d.join("s.json"))]));
    let r = json(&d.join("s.json"));
    assert_eq!(r["config"]["scf"]["mode"], "uks");
    assert_eq!(r["scf"]["converged"], true);

    let d = twice("fci", |d| v(&["fci", "sweep", "--kind", "h2", "--values", "1,5", "-o", s(&d.join("f.jsonl"))]));
    let text = fs::read_to_string(d.join("f.jsonl")).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["config"]["values"][1], 5.0);
}

#[test]
fn plain_and_untrained_scf_agree() {
    let d = scratch("smooth");
    exc(&["scf", "run", "--h2", "1.0", "--xc", "pw92", "--json", s(&d.join("a.json"))], None);
    exc(&["scf", "run", "--h2", "1.0", "--xc", "exphormer-pw92", "--json", s(&d.join("b.json"))], None);
    let e = |f: &str| json(&d.join(f))["scf"]["energies"]["total"].as_f64().unwrap();
    assert!((e("a.json") - e("b.json")).abs() < 1e-10);
}

#[test]
fn config_file_env_seed_and_flag_precedence() {
    let d = scratch("precedence");
    let seed = |extra: &[&str], env: Option<&str>| {
        let mut a = vec!["train", "--print-config"];
        a.extend_from_slice(extra);
        let out = exc(&a, env);
        serde_json::from_slice::<Value>(&out.stdout).unwrap()["seed"].as_u64().unwrap()
    };
    assert_eq!(seed(&[], None), 0);
    assert_eq!(seed(&[], Some("11")), 11);
    assert_eq!(seed(&["--seed", "3"], Some("11")), 3);
    let with_seed = d.join("with.json");
    fs::write(&with_seed, r#"{"seed": 5, "learning_rate": 0.01}"#).unwrap();
    assert_eq!(seed(&["--config", s(&with_seed)], Some("11")), 5);
    let without = d.join("without.json");
    fs::write(&without, r#"{"learning_rate": 0.01}"#).unwrap();
    assert_eq!(seed(&["--config", s(&without)], Some("11")), 11);

    let out = exc(&["train", "--print-config", "--config", s(&with_seed), "--lr", "0.2", "--set", "model.layers=2"], None);
    let c: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(c["learning_rate"], 0.2);
    assert_eq!(c["model"]["layers"], 2);

    let bad = d.join("bad.json");
    fs::write(&bad, r#"{"learning_rat": 1}"#).unwrap();
    let st = Command::new(env!("CARGO_BIN_EXE_exc")).args(["train", "--print-config", "--config", s(&bad)]).output().unwrap();
    assert!(!st.status.success());
}

const TINY: &[&str] = &[
    "--set", "model.channels=4",
    "--set", "model.layers=1",
    "--set", "model.heads=1",
    "--set", "model.n_global=2",
    "--set", "train_s=[1.0,3.1]",
    "--set", "val_s=[2.0]",
    "--epochs", "2",
    "--seed", "1",
];

fn prefixed(p: &str) -> Vec<String> {
    TINY.iter().map(|a| if a.contains('=') { format!("{p}{a}") } else { a.to_string() }).collect()
}

#[test]
fn train_eval_and_ablate_are_deterministic() {
    let d = twice("train", |d| {
        let mut a = v(&["train", "--quiet", "--variant", "gcn", "--out-dir", s(d)]);
        a.extend(prefixed(""));
        a
    });
    for f in ["record.json", "epochs.csv", "predictions.csv", "checkpoint.bin"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let rec = json(&d.join("record.json"));
    assert_eq!(rec["config"]["model"]["variant"], "gcn");
    assert_eq!(rec["record"]["epochs"].as_array().unwrap().len(), 2);
    let csv = fs::read_to_string(d.join("epochs.csv")).unwrap();
    assert!(csv.starts_with("# config {"));
    assert_eq!(csv.lines().nth(1).unwrap().split(',').next(), Some("epoch"));

    let ck = d.join("checkpoint.bin");
    let e = twice("eval", |o| v(&["eval", "dissociation", "--checkpoint", s(&ck), "--s-values", "1.0,5.0", "--out-dir", s(o)]));
    let rep = json(&e.join("dissociation.json"));
    // The checkpoint supplies the training config.
    assert_eq!(rep["config"]["train"]["model"]["channels"], 4);
    assert_eq!(rep["points"].as_array().unwrap().len(), 6);
    let csv = fs::read_to_string(e.join("dissociation.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("x,method,energy,error"));

    let h = twice("h4", |o| {
        let mut a = v(&["eval", "h4", "--untrained", "--thetas", "44,45,46", "--repeats", "1", "--out-dir", s(o)]);
        a.extend(prefixed("train."));
        a.retain(|x| x != "--epochs" && x != "2");
        a
    });
    let rep = json(&h.join("h4.json"));
    assert_eq!(rep["config"]["train"]["base"], "pbe");
    assert_eq!(rep["report"]["summary"].as_array().unwrap().len(), 3);

    let a = twice("ablate", |o| {
        let mut a = v(&["ablate", "--variants", "nn-lda,gcn", "--out-dir", s(o)]);
        a.extend(prefixed("train."));
        a
    });
    let rows = json(&a.join("ablation.json"));
    assert_eq!(rows["rows"].as_array().unwrap().len(), 2);
    assert!(fs::read_to_string(a.join("ablation.csv")).unwrap().lines().nth(1).unwrap().starts_with("variant,"));
}
