use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use suitfilter::io::write_logit_table;
use suitfilter::model::logit;
use suitfilter::{CorrectnessEstimator, LogitRecord, SignalNormalizer, NUM_SIGNALS};

const BIAS: f64 = -3.0;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_suitfilter"));
    c.env_remove("SUITFILTER_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// p_c = σ(logit_diff_top2 + BIAS), so two-class logits `[logit(p) - BIAS, 0]` give p_c = p.
fn write_estimator(dir: &Path) -> PathBuf {
    let mut w = [0.0; NUM_SIGNALS];
    w[8] = 1.0;
    let est = CorrectnessEstimator::from_parameters(w, BIAS, SignalNormalizer::identity(), 0.0);
    let path = dir.join("est.json");
    est.save(&path).unwrap();
    path
}

fn write_pc_file(dir: &Path, name: &str, pcs: &[f64], labeled: bool) -> PathBuf {
    let records: Vec<LogitRecord> = pcs
        .iter()
        .enumerate()
        .map(|(i, &pc)| {
            let r = LogitRecord::new(format!("{name}{i}"), vec![logit(pc) - BIAS, 0.0]);
            if labeled {
                r.with_label(i % 2)
            } else {
                r
            }
        })
        .collect();
    let path = dir.join(format!("{name}.csv"));
    write_logit_table(&path, &records).unwrap();
    path
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    est: PathBuf,
    test: PathBuf,
    shifted: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    Fixture {
        est: write_estimator(&root),
        test: write_pc_file(&root, "test", &[0.2, 0.3, 0.4], true),
        shifted: write_pc_file(&root, "user", &[0.5, 0.6, 0.7], false),
        root,
        _dir: dir,
    }
}

#[test]
fn decide_identical_files_is_inconclusive() {
    let f = fixture();
    let report = f.root.join("r.json");
    let out = run(&[
        "decide",
        "--estimator",
        p(&f.est),
        "--test",
        p(&f.test),
        "--user",
        p(&f.test),
        "--margin",
        "0",
        "--alpha",
        "0.05",
        "--report",
        p(&report),
    ]);
    assert_eq!(code(&out), 10, "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(r["decision"], "INCONCLUSIVE");
    assert!((r["p_value"].as_f64().unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn decide_shifted_user_is_suitable() {
    let f = fixture();
    let out = run(&[
        "--json",
        "decide",
        "--estimator",
        p(&f.est),
        "--test",
        p(&f.test),
        "--user",
        p(&f.shifted),
        "--margin",
        "0",
        "--alpha",
        "0.05",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(r["decision"], "SUITABLE");
    assert!((r["t"].as_f64().unwrap() + 3.674).abs() < 1e-3);
    assert!((r["df"].as_f64().unwrap() - 4.0).abs() < 1e-6);
    assert!((r["p_value"].as_f64().unwrap() - 0.0106).abs() < 5e-4);
}

#[test]
fn explicit_deltas_shift_the_margin() {
    let f = fixture();
    let args = |dt: &str, du: &str| {
        run(&[
            "--json",
            "decide",
            "--estimator",
            p(&f.est),
            "--test",
            p(&f.test),
            "--user",
            p(&f.shifted),
            "--margin",
            "0",
            "--alpha",
            "0.05",
            "--delta-test",
            dt,
            "--delta-u",
            du,
        ])
    };
    let out = args("0.0", "0.5");
    assert_eq!(code(&out), 10);
    let r: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((r["m_prime"].as_f64().unwrap() + 0.5).abs() < 1e-12);
    assert_eq!(code(&args("0.1", "0.0")), 0);
}

#[test]
fn delta_flags_must_come_together() {
    let f = fixture();
    let out = run(&[
        "decide",
        "--estimator",
        p(&f.est),
        "--test",
        p(&f.test),
        "--user",
        p(&f.shifted),
        "--delta-test",
        "0.1",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn labeled_user_batches_set_deltas() {
    let f = fixture();
    let labeled = write_pc_file(&f.root, "lab", &[0.5, 0.6, 0.7, 0.4], true);
    let out = run(&[
        "--json",
        "decide",
        "--estimator",
        p(&f.est),
        "--test",
        p(&f.test),
        "--user",
        p(&f.shifted),
        "--labeled-user",
        p(&labeled),
    ]);
    let r: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    // test labels alternate 0/1 on argmax 0: correct on rows 0 and 2
    let delta_test = (0.2 + 0.3 + 0.4) / 3.0 - 2.0 / 3.0;
    let delta_u = (0.5 + 0.6 + 0.7 + 0.4) / 4.0 - 0.5;
    assert!((r["delta_test"].as_f64().unwrap() - delta_test).abs() < 1e-9);
    assert!((r["delta_u"].as_f64().unwrap() - delta_u).abs() < 1e-9);
    assert!((r["m_prime"].as_f64().unwrap() - (delta_test - delta_u)).abs() < 1e-9);
}

#[test]
fn degenerate_test_is_an_error_distinct_from_inconclusive() {
    let f = fixture();
    let flat = write_pc_file(&f.root, "flat", &[0.5, 0.5, 0.5], false);
    let out = run(&[
        "decide",
        "--estimator",
        p(&f.est),
        "--test",
        p(&flat),
        "--user",
        p(&flat),
        "--margin",
        "0",
    ]);
    let c = code(&out);
    assert!(c != 0 && c != 10, "exit {c}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate"));
}

#[test]
fn usage_errors_exit_2() {
    let f = fixture();
    assert_eq!(code(&run(&["decide", "--bogus"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    let missing = f.root.join("missing.csv");
    let out = run(&[
        "decide",
        "--estimator",
        p(&f.est),
        "--test",
        p(&missing),
        "--user",
        p(&f.test),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));
    let out = run(&[
        "decide",
        "--estimator",
        p(&f.est),
        "--test",
        p(&f.test),
        "--user",
        p(&f.test),
        "--alpha",
        "1.5",
    ]);
    assert_eq!(code(&out), 2);
    let bad = f.root.join("bad.csv");
    std::fs::write(&bad, "id,logit_0,logit_1\na,0.0,1.0\nb,0.5\n").unwrap();
    let out = run(&[
        "decide",
        "--estimator",
        p(&f.est),
        "--test",
        p(&f.test),
        "--user",
        p(&bad),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn training_requires_labels() {
    let f = fixture();
    let out = run(&[
        "train",
        "--sf",
        p(&f.shifted),
        "--out",
        p(&f.root.join("x.json")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("label"));
}

fn synth(root: &Path, seed: &str) -> PathBuf {
    let config = root.join("synth.json");
    std::fs::write(
        &config,
        r#"{"n_classes":5,"seed":1,"domains":[
            {"name":"a","accuracy":0.7,"n_samples":300},
            {"name":"b","accuracy":0.75,"n_samples":300},
            {"name":"c","accuracy":0.55,"n_samples":300}]}"#,
    )
    .unwrap();
    let out_dir = root.join(format!("folds-{seed}"));
    let out = run(&[
        "--seed",
        seed,
        "eval",
        "synth",
        "--config",
        p(&config),
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    out_dir
}

#[test]
fn train_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let folds = synth(dir.path(), "3");
    let train = |name: &str, seed: &str| {
        let est = dir.path().join(name);
        let out = bin()
            .env("SUITFILTER_SEED", seed)
            .args([
                "train",
                "--sf",
                p(&folds.join("a.csv")),
                "--calibrate",
                "platt",
                "--out",
                p(&est),
            ])
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read_to_string(est).unwrap()
    };
    assert_eq!(train("e1.json", "9"), train("e2.json", "9"));
    assert_ne!(train("e3.json", "9"), train("e4.json", "10"));
}

#[test]
fn eval_grid_counts_ordered_triples() {
    let dir = tempfile::tempdir().unwrap();
    let folds = synth(dir.path(), "5");
    let csv = dir.path().join("grid.csv");
    let summary = dir.path().join("summary.json");
    let out = run(&[
        "--quiet",
        "eval",
        "grid",
        "--folds",
        p(&folds),
        "--margin",
        "0",
        "--alpha",
        "0.05",
        "--out",
        p(&csv),
        "--summary",
        p(&summary),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 6);
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(summary).unwrap()).unwrap();
    assert_eq!(s["n"], 6);
}

#[test]
fn synth_seed_changes_data() {
    let dir = tempfile::tempdir().unwrap();
    let a = std::fs::read(synth(dir.path(), "1").join("a.csv")).unwrap();
    let b = std::fs::read(synth(dir.path(), "2").join("a.csv")).unwrap();
    let a2 = std::fs::read(synth(dir.path(), "1").join("a.csv")).unwrap();
    assert_ne!(a, b);
    assert_eq!(a, a2);
}

#[test]
fn monitor_reports_each_stage() {
    let f = fixture();
    let report = f.root.join("m.json");
    let out = run(&[
        "monitor",
        "--estimator",
        p(&f.est),
        "--test",
        p(&f.test),
        "--user",
        p(&f.shifted),
        p(&f.test),
        "--correction",
        "pocock",
        "--stages",
        "2",
        "--report",
        p(&report),
    ]);
    assert_eq!(code(&out), 10);
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    let stages = r.as_array().unwrap();
    assert_eq!(stages.len(), 2);
    assert_eq!(stages[0]["threshold"], 0.025);
    assert_eq!(stages[0]["decision"], "SUITABLE");
    assert_eq!(stages[1]["stage"], 2);

    let out = run(&[
        "monitor",
        "--estimator",
        p(&f.est),
        "--test",
        p(&f.test),
        "--user",
        p(&f.shifted),
        p(&f.shifted),
        p(&f.shifted),
        "--correction",
        "obf",
        "--stages",
        "2",
    ]);
    assert_eq!(code(&out), 1, "schedule exhaustion is a runtime error");

    let out = run(&[
        "monitor",
        "--estimator",
        p(&f.est),
        "--test",
        p(&f.test),
        "--user",
        p(&f.test),
        p(&f.shifted),
        "--correction",
        "bh",
    ]);
    assert_eq!(code(&out), 0);
}

#[test]
fn signals_and_diagnose() {
    let f = fixture();
    let sig = f.root.join("s.csv");
    assert_eq!(code(&run(&["signals", p(&f.test), "--out", p(&sig)])), 0);
    let text = std::fs::read_to_string(sig).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 1 + NUM_SIGNALS);
    assert!(header.starts_with("id,conf_max"));

    let out = run(&[
        "--json",
        "diagnose",
        "--estimator",
        p(&f.est),
        "--labeled",
        p(&f.test),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let d: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let c = &d["calibration"];
    assert!(c["ece"].as_f64().unwrap() <= c["mce"].as_f64().unwrap());
    assert_eq!(d["signals"].as_array().unwrap().len(), NUM_SIGNALS);
}
