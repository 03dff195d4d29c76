//! End-to-end checks of the `drogsure` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_drogsure"))
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).output().expect("binary runs");
    (
        out.status.code().expect("exit code"),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn ok(args: &[&str]) -> String {
    let (code, stdout, stderr) = run(args);
    assert_eq!(code, 0, "{args:?} failed: {stderr}");
    stdout
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn gen(dir: &Path, seed: &str) -> PathBuf {
    let d = dir.join(format!("data{seed}"));
    ok(&["gen", "--preset", "fixture", "--seed", seed, "--out", s(&d)]);
    d
}

/// Writes a configuration with few epochs next to the data.
fn quick_config(dir: &Path, data: &Path, extra: &str) -> PathBuf {
    let cfg = dir.join("quick.json");
    let text = format!(
        r#"{{"variant": "drogsure", "dataset": "{}", "validation": "{}", "pretrain_epochs": 4, "finetune_epochs": 6{extra}}}"#,
        s(&data.join("learning")),
        s(&data.join("validation"))
    );
    fs::write(&cfg, text).unwrap();
    cfg
}

#[test]
fn gen_writes_both_splits_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "3");
    for split in ["learning", "validation"] {
        let m = json(&a.join(split).join("manifest.json"));
        assert_eq!(m["modalities"], 3);
        for t in 0..3 {
            assert!(a.join(split).join(format!("modality_{t}.f64")).is_file());
        }
    }
    assert_eq!(json(&a.join("learning/manifest.json"))["samples"], 120);
    let b = dir.path().join("again");
    ok(&["gen", "--preset", "fixture", "--seed", "3", "--out", s(&b)]);
    assert_eq!(fs::read(a.join("spec.json")).unwrap(), fs::read(b.join("spec.json")).unwrap());
    assert_eq!(fs::read(a.join("run_manifest.json")).unwrap(), fs::read(b.join("run_manifest.json")).unwrap());
    let c = gen(dir.path(), "4");
    assert_ne!(fs::read(a.join("spec.json")).unwrap(), fs::read(c.join("spec.json")).unwrap());
}

#[test]
fn gen_rejects_invalid_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&["gen", "--preset", "fixture", "--shared-dim", "70", "--out", s(dir.path())]);
    assert_eq!(code, 1, "{err}");
    assert!(!err.is_empty());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["no-such-command"]).0, 1);
    assert_eq!(run(&["train"]).0, 1);
    assert_eq!(run(&["--help"]).0, 0);
}

#[test]
fn gradcheck_passes_and_negative_control_fails() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good");
    ok(&["gradcheck", "--out", s(&good)]);
    let r = json(&good.join("gradcheck.json"));
    let blocks = r["blocks"].as_array().unwrap();
    let mut names: Vec<String> =
        blocks.iter().map(|b| format!("{}/{}", b["variant"].as_str().unwrap(), b["block"].as_str().unwrap())).collect();
    let count = names.len();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), count, "every block listed once");
    assert!(blocks.iter().all(|b| b["passed"] == true));
    let bad = dir.path().join("bad");
    let (code, _, _) = run(&["gradcheck", "--inject-bug", "--out", s(&bad)]);
    assert_eq!(code, 2);
}

fn planted_affinity(path: &Path, blocks: usize, per: usize, equal: bool) {
    let n = blocks * per;
    let mut text = String::new();
    for i in 0..n {
        let row: Vec<String> = (0..n)
            .map(|j| {
                if i != j && i / per == j / per {
                    let w = if equal { 1.0 } else { 0.6 + 0.1 * ((i + j) % 4) as f64 };
                    w.to_string()
                } else {
                    "0".into()
                }
            })
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

#[test]
fn bounds_identical_random_and_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    planted_affinity(&a, 3, 5, false);
    let same = dir.path().join("same");
    ok(&["bounds", "--clean", s(&a), "--perturbed", s(&a), "--clusters", "3", "--out", s(&same)]);
    let r = json(&same.join("bounds.json"));
    let rep = &r["reports"][0]["report"];
    assert_eq!(rep["frob_distance"], 0.0);
    assert_eq!(rep["bound_holds"], true);

    let sweep = dir.path().join("sweep");
    ok(&["bounds", "--clean", s(&a), "--random", "25", "--scale", "0.01", "--clusters", "3", "--out", s(&sweep)]);
    let r = json(&sweep.join("bounds.json"));
    assert_eq!(r["reports"].as_array().unwrap().len(), 25);
    assert_eq!(r["consistent"], true);
    for rep in r["reports"].as_array().unwrap() {
        assert_eq!(rep["report"]["n_eps_holds"], true);
        assert_eq!(rep["report"]["bound_holds"], true);
    }

    let eq = dir.path().join("eq.csv");
    planted_affinity(&eq, 3, 4, true);
    let deg = dir.path().join("deg");
    ok(&["bounds", "--clean", s(&eq), "--perturbed", s(&eq), "--clusters", "2", "--out", s(&deg)]);
    let r = json(&deg.join("bounds.json"));
    assert_eq!(r["reports"][0]["report"]["gap_degenerate"], true);
}

#[test]
fn train_resume_cluster_and_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "1");
    let cfg = quick_config(dir.path(), &data, r#", "scenarios": [{"name": "missing", "corruption": {"kind": "none"}, "phase": "test", "subset_sweep": true, "seeds": [0]}]"#);

    let t1 = dir.path().join("t1");
    ok(&["train", "--config", s(&cfg), "--out", s(&t1)]);
    assert!(t1.join("checkpoint.bin").is_file());
    let trace = fs::read_to_string(t1.join("loss_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 10);
    let manifest = json(&t1.join("run_manifest.json"));
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);

    // Resume with more fine-tuning epochs continues the same trace.
    let longer = dir.path().join("longer.json");
    fs::write(&longer, fs::read_to_string(&cfg).unwrap().replace("\"finetune_epochs\": 6", "\"finetune_epochs\": 9")).unwrap();
    let t2 = dir.path().join("t2");
    ok(&["train", "--config", s(&longer), "--resume", s(&t1.join("checkpoint.bin")), "--out", s(&t2)]);
    let resumed = fs::read_to_string(t2.join("loss_trace.csv")).unwrap();
    assert_eq!(resumed.lines().count(), 1 + 13);
    assert!(resumed.starts_with(&trace));

    let c = dir.path().join("c");
    ok(&[
        "cluster",
        "--checkpoint",
        s(&t1.join("checkpoint.bin")),
        "--dataset",
        s(&data.join("learning")),
        "--validation",
        s(&data.join("validation")),
        "--out",
        s(&c),
    ]);
    let labels = fs::read_to_string(c.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 1 + 120);
    let m = json(&c.join("metrics.json"));
    assert!(m["learning"]["acc"].as_f64().is_some());
    assert!(m["validation"]["acc"].as_f64().is_some());

    let e = dir.path().join("e");
    ok(&["experiment", "--config", s(&cfg), "--out", s(&e)]);
    let csv = fs::read_to_string(e.join("report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    // Two variants, one seed: one learning row and seven subsets each.
    assert_eq!(rows.len(), 2 * (1 + 7));
    for k in 1..=3 {
        assert!(rows.iter().any(|r| r.contains(",validation,") && r.split(',').nth(4).unwrap().split('|').count() == k));
    }
}

#[test]
fn failures_have_nonzero_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "2");
    let missing = dir.path().join("nowhere.json");
    fs::write(&missing, r#"{"variant": "drogsure", "dataset": "does/not/exist"}"#).unwrap();
    let (code, _, _) = run(&["train", "--config", s(&missing), "--out", s(&dir.path().join("x"))]);
    assert_ne!(code, 0);
    let (code, _, _) = run(&[
        "cluster",
        "--checkpoint",
        s(&dir.path().join("none.bin")),
        "--dataset",
        s(&data.join("learning")),
        "--out",
        s(&dir.path().join("y")),
    ]);
    assert_ne!(code, 0);
}

#[test]
fn empty_scenario_list_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.json");
    fs::create_dir(dir.path().join("unused")).unwrap();
    fs::write(&cfg, r#"{"variant": "drogsure", "dataset": "unused"}"#).unwrap();
    let out = dir.path().join("o");
    let (code, _, err) = run(&["experiment", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(
        fs::read_to_string(out.join("report.csv")).unwrap(),
        "scenario,variant,seed,phase,modalities_available,acc,ari,nmi,acc_drop\n"
    );
}
