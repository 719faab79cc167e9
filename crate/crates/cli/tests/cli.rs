//! Command-line contracts: exit codes, output files and manifests.

use std::path::Path;
use std::process::{Command, Output};

use kwta_core::data::{default_mnist_dir, mnist_paths, Split};

fn kwta(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kwta"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn manifest(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn mnist_present() -> bool {
    let ok = mnist_paths(default_mnist_dir(), Split::Train).is_ok();
    if !ok {
        eprintln!("skipping: MNIST not installed");
    }
    ok
}

#[test]
fn fit1d_with_full_ratio_reports_no_jumps() {
    let dir = tempfile::tempdir().unwrap();
    let out = kwta(&["fit1d", "--gamma", "1.0", "--epochs", "50"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("jumps=0"));
    let m = manifest(dir.path());
    assert_eq!(m["results"]["jumps"], 0);
    assert_eq!(m["command"], "fit1d");
    assert_eq!(csv_rows(&dir.path().join("predictions.csv")).len(), 2000);
}

#[test]
fn theorem_ranges_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        kwta(&["theory", "disjoint", "--alpha", "0.4"], dir.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        kwta(&["theory", "dense", "--gamma", "0.5"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(
        kwta(&["theory", "bernoulli", "--p", "0.9"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(
        kwta(&["theory", "dense", "--no-such-flag"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(
        kwta(&["train", "--activation", "relu", "--gamma", "0.1"], dir.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        kwta(&["train", "--finetune", "0.1:0.2:0.005"], dir.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn missing_dataset_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = kwta(
        &["train", "--data-dir", "/definitely/not/here", "--epochs", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("MNIST files not found"));
}

#[test]
fn dense_sweep_writes_one_summary_row_per_width() {
    let dir = tempfile::tempdir().unwrap();
    let out = kwta(
        &["theory", "dense", "--l", "64,256", "--trials", "50", "--seed", "3"],
        dir.path(),
    );
    assert!(out.status.success());
    let rows = csv_rows(&dir.path().join("dense_summary.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(csv_rows(&dir.path().join("dense_trials.csv")).len(), 100);
    let m = manifest(dir.path());
    assert_eq!(m["seed"], 3);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn single_threaded_reruns_are_bit_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = kwta(&["theory", "jump", "--crossings", "30", "--threads", "1"], d.path());
        assert!(out.status.success());
    }
    for f in ["jump_summary.csv", "jump_crossings.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap()
        );
    }
}

#[test]
fn mnist_train_attack_and_landscape() {
    if !mnist_present() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let kw = dir.path().join("kwta");
    let out = kwta(
        &[
            "train",
            "--preset",
            "mnist-mlp",
            "--activation",
            "kwta",
            "--gamma",
            "0.08",
            "--epochs",
            "5",
            "--train-size",
            "1000",
            "--test-size",
            "200",
        ],
        &kw,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(kw.join("model.bin").exists());
    assert_eq!(csv_rows(&kw.join("metrics.csv")).len(), 5);

    let ft = dir.path().join("ft");
    let out = kwta(
        &[
            "train",
            "--preset",
            "mnist-mlp",
            "--activation",
            "kwta",
            "--epochs",
            "0",
            "--finetune",
            "0.2:0.18:0.005",
            "--train-size",
            "500",
            "--test-size",
            "0",
        ],
        &ft,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let gammas: Vec<f64> = csv_rows(&ft.join("metrics.csv"))
        .iter()
        .map(|r| r[4].parse().unwrap())
        .collect();
    let expected = [0.195, 0.195, 0.19, 0.19, 0.185, 0.185, 0.18, 0.18];
    assert_eq!(gammas.len(), expected.len());
    for (g, e) in gammas.iter().zip(expected) {
        assert!((g - e).abs() < 1e-12, "{gammas:?}");
    }

    let relu = dir.path().join("relu");
    let out = kwta(
        &[
            "train",
            "--preset",
            "mnist-mlp",
            "--activation",
            "relu",
            "--epochs",
            "1",
            "--train-size",
            "500",
            "--test-size",
            "0",
        ],
        &relu,
    );
    assert!(out.status.success());

    let none = dir.path().join("none");
    let model = kw.join("model.bin");
    let model = model.to_str().unwrap();
    let out = kwta(
        &["attack", "--model", model, "--attack", "none", "--test-size", "50"],
        &none,
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("A_std"));
    assert!(manifest(&none)["results"].get("a_rob").is_none());

    let tr = dir.path().join("transfer");
    let source = relu.join("model.bin");
    let out = kwta(
        &[
            "attack",
            "--model",
            model,
            "--transfer-source",
            source.to_str().unwrap(),
            "--steps",
            "3",
            "--test-size",
            "50",
        ],
        &tr,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&tr);
    assert_eq!(m["results"]["target_gradient_calls"], 0);
    assert_eq!(m["results"]["within_budget"], true);
    assert_eq!(csv_rows(&tr.join("robustness.csv")).len(), 50);

    let ls = dir.path().join("landscape");
    assert!(kwta(&["landscape", "--model", model], &ls).status.success());
    assert_eq!(csv_rows(&ls.join("landscape_model_0.csv")).len(), 2500);
    let one = dir.path().join("landscape1");
    assert!(kwta(&["landscape", "--model", model, "--samples", "1"], &one)
        .status
        .success());
    let rows = csv_rows(&one.join("landscape_model_0.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0][0].as_str(), rows[0][1].as_str()), ("0.0", "0.0"));
}
