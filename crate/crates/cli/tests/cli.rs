use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wifi2vision"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, n: &str) {
    let out = run(&["simulate", "--n", n, "--out", p(dir), "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn tiny_supervised_config(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("sup.json");
    fs::write(&cfg, r#"{"regressor": {"widths": [8], "epochs": 2, "batch_size": 4}}"#).unwrap();
    cfg
}

#[test]
fn unknown_subcommand_exits_one_with_usage() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = run(&["simulate", "--n", "3", "--out", "x", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_dataset_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "supervised",
        "--data",
        p(&tmp.path().join("absent")),
        "--out",
        p(&tmp.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_config_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, "6");
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"regressor": {"epochs": 0}}"#).unwrap();
    let out = run(&["train", "supervised", "--data", p(&data), "--config", p(&cfg), "--out", p(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_train_evaluate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, "20");
    assert!(data.join("run_manifest.json").exists());
    assert!(data.join("index.json").exists());
    let cfg = tiny_supervised_config(tmp.path());
    let run_dir = tmp.path().join("sup");
    let out = run(&["train", "supervised", "--data", p(&data), "--config", p(&cfg), "--out", p(&run_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.ckpt", "loss.csv", "run_manifest.json"] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }
    let ck = run_dir.join("model.ckpt");
    let eval = |name: &str| {
        let report = tmp.path().join(name);
        let out = run(&[
            "evaluate",
            "--kind",
            "supervised",
            "--checkpoint",
            p(&ck),
            "--data",
            p(&data),
            "--split",
            "val",
            "--out",
            p(&report),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read_to_string(report).unwrap()
    };
    let a = eval("a.json");
    let b = eval("b.json");
    let ja: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(ja["n_images"], 4);
    assert_eq!(ja["split"]["n_samples"], 4);
    let strip = |s: &str| s.replace("a.json", "").replace("b.json", "");
    assert_eq!(strip(&a), strip(&b));
    assert!(tmp.path().join("a.manifest.json").exists());

    let out = run(&["compare", "--a", p(&tmp.path().join("a.json")), "--b", p(&tmp.path().join("b.json"))]);
    assert!(out.status.success());
    let c: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(c["difference_points"], 0.0);

    let inf = tmp.path().join("inf");
    let out = run(&["infer", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&inf)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(inf.join("detections.jsonl")).unwrap().lines().count(), 20);
}

#[test]
fn compare_rejects_different_splits() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, "20");
    let run_dir = tmp.path().join("sup");
    let cfg = tiny_supervised_config(tmp.path());
    assert!(run(&["train", "supervised", "--data", p(&data), "--config", p(&cfg), "--out", p(&run_dir)])
        .status
        .success());
    let ck = run_dir.join("model.ckpt");
    for (split, name) in [("val", "v.json"), ("train", "t.json")] {
        let out = run(&[
            "evaluate", "--kind", "supervised", "--checkpoint", p(&ck), "--data", p(&data), "--split", split, "--out",
            p(&tmp.path().join(name)),
        ]);
        assert!(out.status.success());
    }
    let out = run(&["compare", "--a", p(&tmp.path().join("v.json")), "--b", p(&tmp.path().join("t.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different splits"));
}

#[test]
fn gan_train_infer_with_comparison_strips() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, "10");
    let cfg = tmp.path().join("gan.json");
    fs::write(
        &cfg,
        r#"{"generator": {"widths": [4, 4, 4, 4]},
            "discriminator": {"embed_channels": 4, "widths": [4, 4, 4, 4]},
            "training": {"epochs": 1, "batch_size": 4}}"#,
    )
    .unwrap();
    let run_dir = tmp.path().join("gan");
    let out = run(&["train", "gan", "--data", p(&data), "--config", p(&cfg), "--out", p(&run_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(metrics.starts_with("epoch,d_loss,g_loss,l1"));
    assert!(run_dir.join("discriminator.ckpt").exists());

    let inf = tmp.path().join("inf");
    let ck = run_dir.join("generator.ckpt");
    let out = run(&["infer", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&inf), "--compare"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let strip = image::open(inf.join("compare_000000.png")).unwrap();
    assert_eq!(strip.width(), 320);
    assert!(inf.join("frame_000009.png").exists());

    let out = run(&[
        "evaluate", "--kind", "gan", "--checkpoint", p(&ck), "--data", p(&data), "--split", "all", "--out",
        p(&tmp.path().join("g.json")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = run(&[
        "evaluate", "--kind", "supervised", "--checkpoint", p(&ck), "--data", p(&data), "--out",
        p(&tmp.path().join("x.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
