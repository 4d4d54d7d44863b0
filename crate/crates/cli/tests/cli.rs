use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn spikegrad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikegrad"))
        .args(args)
        .env_remove("SPIKEGRAD_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small blob dataset plus its generated config.
fn blobs(dir: &Path) -> PathBuf {
    let o = spikegrad(&["gen-data", "--kind", "blobs", "--n-train", "200", "--n-test", "100", "--seed", "4", "--out", p(dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("blobs.cfg")
}

fn train(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--config", p(cfg), "--out", p(out), "--quiet", "--set", "run.epochs=2", "--set", "run.batch_size=16"];
    args.extend_from_slice(extra);
    spikegrad(&args)
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.cfg");
    let o = spikegrad(&["train", "--config", p(&missing), "--out", p(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.cfg"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = blobs(dir.path());
    let o = train(&cfg, &dir.path().join("out"), &["--set", "optim.learning_rate=0.1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("optim.learning_rate"), "{}", stderr(&o));
}

#[test]
fn zero_alpha_matches_disabled_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = blobs(dir.path());
    let (a, b) = (dir.path().join("off"), dir.path().join("zero"));
    let o = train(&cfg, &a, &["--set", "gradscale.enabled=false"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = train(&cfg, &b, &["--set", "gradscale.enabled=true", "--set", "gradscale.alpha=0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(&a.join("summary.json")), read(&b.join("summary.json")));
    // Relation statistics are only gathered when scaling is on, so compare
    // the columns both runs share.
    let cols = |s: String| -> Vec<String> {
        s.lines().map(|l| l.split(',').take(7).collect::<Vec<_>>().join(",")).collect()
    };
    assert_eq!(cols(read(&a.join("metrics.csv"))), cols(read(&b.join("metrics.csv"))));
    assert_eq!(
        std::fs::read(a.join("rep0.ckpt")).unwrap(),
        std::fs::read(b.join("rep0.ckpt")).unwrap()
    );
}

#[test]
fn manifest_rerun_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = blobs(dir.path());
    let first = dir.path().join("first");
    let o = train(&cfg, &first, &["--seed", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let manifest: Value = serde_json::from_str(&read(&first.join("manifest.json"))).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["seed_source"], "--seed");
    assert_eq!(manifest["config"]["run.seed"], "9");

    let again = dir.path().join("again");
    let o = spikegrad(&["train", "--manifest", p(&first.join("manifest.json")), "--out", p(&again), "--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(&first.join("summary.json")), read(&again.join("summary.json")));
    assert_eq!(read(&first.join("metrics.csv")), read(&again.join("metrics.csv")));
}

#[test]
fn refuses_to_overwrite_a_previous_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = blobs(dir.path());
    let out = dir.path().join("run");
    assert!(train(&cfg, &out, &[]).status.success());
    let before = read(&out.join("metrics.csv"));
    let o = train(&cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(read(&out.join("metrics.csv")), before);
}

#[test]
fn seed_precedence_and_reporting() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = blobs(dir.path());
    // Drop the seed line so the environment variable gets a say.
    let text: String = read(&cfg).lines().filter(|l| !l.starts_with("seed =")).map(|l| format!("{l}\n")).collect();
    let cfg_noseed = dir.path().join("noseed.cfg");
    std::fs::write(&cfg_noseed, text).unwrap();

    let run = |cfg: &Path, name: &str, extra: &[&str], env: Option<&str>| -> String {
        let out = dir.path().join(name);
        let mut args = vec!["train", "--config", p(cfg), "--out", p(&out), "--quiet", "--set", "run.epochs=1"];
        args.extend_from_slice(extra);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_spikegrad"));
        cmd.args(&args).env_remove("SPIKEGRAD_SEED");
        if let Some(v) = env {
            cmd.env("SPIKEGRAD_SEED", v);
        }
        let o = cmd.output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o).lines().next().unwrap().to_string()
    };
    assert_eq!(run(&cfg_noseed, "a", &[], None), "seed 0 (default)");
    assert_eq!(run(&cfg_noseed, "b", &[], Some("21")), "seed 21 (SPIKEGRAD_SEED)");
    assert_eq!(run(&cfg, "c", &[], Some("21")), "seed 0 (config)");
    assert_eq!(run(&cfg, "d", &["--set", "run.seed=5"], Some("21")), "seed 5 (--set run.seed)");
    assert_eq!(run(&cfg, "e", &["--set", "run.seed=5", "--seed", "6"], None), "seed 6 (--seed)");
}

#[test]
fn eval_is_deterministic_and_matches_training_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = blobs(dir.path());
    let out = dir.path().join("run");
    assert!(train(&cfg, &out, &[]).status.success());
    let ckpt = out.join("rep0.ckpt");
    let images = dir.path().join("blobs-test-images.idx");
    let labels = dir.path().join("blobs-test-labels.idx");
    let args = [
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--idx-images",
        p(&images),
        "--idx-labels",
        p(&labels),
        "--json",
    ];
    let a = spikegrad(&args);
    let b = spikegrad(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));

    let report: Value = serde_json::from_str(&stdout(&a)).unwrap();
    let summary: Value = serde_json::from_str(&read(&out.join("summary.json"))).unwrap();
    assert_eq!(report["samples"], 100);
    assert_eq!(report["accuracy"], summary["runs"][0]["test_accuracy"]);
    assert_eq!(report["mean_spikes"], summary["runs"][0]["spikes"]);
}

#[test]
fn eval_rejects_mismatched_input_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = blobs(dir.path());
    let out = dir.path().join("run");
    assert!(train(&cfg, &out, &[]).status.success());
    let o = spikegrad(&["eval", "--checkpoint", p(&out.join("rep0.ckpt")), "--synthetic", "glyphs", "--n", "10"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("1x1x2") && err.contains("1x16x16"), "{err}");
}

#[test]
fn eval_rejects_corrupt_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"spikegrad-checkpoint 1\ninput 2\n").unwrap();
    let o = spikegrad(&["eval", "--checkpoint", p(&bad), "--synthetic", "blobs"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_passes_and_catches_a_perturbed_surrogate() {
    let o = spikegrad(&["verify"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(!stdout(&o).contains("FAIL"));

    let o = spikegrad(&["verify", "--perturb-surrogate-width", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    let line = |name: &str| out.lines().find(|l| l.contains(name)).unwrap_or_else(|| panic!("no {name} in\n{out}")).to_string();
    assert!(line("rectangular_window").contains("FAIL"), "{out}");
    for name in ["smooth_grad_dense_soft", "smooth_grad_dense_hard", "smooth_grad_conv_soft", "smooth_grad_conv_hard"] {
        assert!(line(name).contains("PASS"), "{out}");
    }
}

#[test]
fn verify_filter_without_matches_is_a_usage_error() {
    let o = spikegrad(&["verify", "--only", "no_such_check"]);
    assert_eq!(o.status.code(), Some(2));
}
