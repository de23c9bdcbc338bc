use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn vesicle(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vesicle"))
        .args(args)
        .current_dir(cwd)
        .env_remove("VESICLE_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) {
    let out = vesicle(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(args: &[&str], cwd: &Path) -> i32 {
    vesicle(args, cwd).status.code().expect("exit code")
}

fn record(path: PathBuf) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn synth_writes_artifacts_and_record() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--seed", "7", "--dims", "128,128,40", "--density", "0.75", "--out", "phantom"], d);
    for f in ["em.vsv", "membrane.vsv", "truth.json", "vesicles.txt", "run.json"] {
        assert!(d.join("phantom").join(f).exists(), "{f} missing");
    }
    let r = record(d.join("phantom/run.json"));
    assert_eq!(r["tool"], "vesicle");
    assert_eq!(r["subcommand"], "synth");
    assert_eq!(r["config"]["seed"], 7);
    assert_eq!(r["summary"]["synapses"], 1);

    ok(&["synth", "--seed", "7", "--dims", "128,128,40", "--density", "0.75", "--out", "again"], d);
    for f in ["em.vsv", "membrane.vsv", "truth.json", "truth.labels.vsv", "vesicles.txt"] {
        assert_eq!(std::fs::read(d.join("phantom").join(f)).unwrap(), std::fs::read(d.join("again").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn eval_identity_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--seed", "3", "--dims", "128,128,40", "--out", "p"], d);
    ok(&["eval", "--detected", "p/truth.json", "--truth", "p/truth.json", "--out", "pr.csv"], d);
    let csv = std::fs::read_to_string(d.join("pr.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "threshold,min2d,max2d,min3d,persistence,tp,fp,fn,precision,recall");
    let cols: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&cols[5..], ["1", "0", "0", "1", "1"]);
    assert!(d.join("pr.csv.run.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&["fuse", "--bogus"], d), 1);
    assert_eq!(code(&["no-such-command"], d), 1);
    assert_eq!(code(&["synth", "--dims", "1,2", "--out", "x"], d), 1);
    assert_eq!(code(&["--help"], d), 0);
    assert_eq!(code(&["fuse", "--prob", "missing.vsv", "--out", "o.json"], d), 2);

    ok(&["synth", "--seed", "1", "--dims", "128,128,40", "--out", "p"], d);
    // Out-of-range slice and invalid fusion settings are parameter errors.
    assert_eq!(code(&["render", "--em", "p/em.vsv", "--z", "40", "--out", "r.png"], d), 1);
    assert_eq!(code(&["fuse", "--prob", "p/em.vsv", "--threshold", "2", "--out", "o.json"], d), 1);
    // A u8 volume where probabilities are expected is a data error.
    assert_eq!(code(&["fuse", "--prob", "p/em.vsv", "--out", "o.json"], d), 2);

    let mut bad = std::fs::read(d.join("p/em.vsv")).unwrap();
    bad[100] ^= 0xff;
    std::fs::write(d.join("bad.vsv"), bad).unwrap();
    assert_eq!(code(&["vesicles", "--em", "bad.vsv", "--out", "v.txt"], d), 2);
    assert!(!d.join("v.txt").exists());
}

#[test]
fn workers_flag_and_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = Command::new(env!("CARGO_BIN_EXE_vesicle"))
        .args(["synth", "--dims", "128,128,40", "--out", "p"])
        .current_dir(d)
        .env("VESICLE_WORKERS", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(record(d.join("p/run.json"))["workers"], 3);

    ok(&["synth", "--dims", "128,128,40", "--workers", "2", "--out", "q"], d);
    assert_eq!(record(d.join("q/run.json"))["workers"], 2);
    assert_eq!(code(&["synth", "--dims", "128,128,40", "--workers", "0", "--out", "r"], d), 1);
}

#[test]
fn mismatched_inputs_rejected_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--seed", "1", "--dims", "128,128,40", "--out", "a"], d);
    ok(&["synth", "--seed", "1", "--dims", "128,128,20", "--out", "b"], d);
    let args = [
        "train", "--em", "a/em.vsv", "--labels", "b/truth.json", "--n-samples", "100", "--out", "m.vrf",
    ];
    assert_eq!(code(&args, d), 2);
    let args = [
        "train", "--em", "a/em.vsv", "--labels", "a/truth.json", "--membrane", "b/membrane.vsv", "--out", "m.vrf",
    ];
    assert_eq!(code(&args, d), 2);
    assert!(!d.join("m.vrf").exists());
}

/// Full file-based pipeline on a phantom with three synapses.
#[test]
fn pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--seed", "7", "--dims", "256,256,40", "--density", "1.0", "--out", "p"], d);
    ok(&["vesicles", "--em", "p/em.vsv", "--out", "v.txt"], d);
    assert!(d.join("v.txt.json").exists());
    let common = ["--em", "p/em.vsv", "--membrane", "p/membrane.vsv", "--vesicles", "v.txt"];

    let mut train = vec!["train", "--labels", "p/truth.json", "--n-samples", "2000", "--trees", "16", "--out", "m.vrf"];
    train.extend(common);
    ok(&train, d);
    let r = record(d.join("m.vrf.run.json"));
    assert!(r["summary"]["oob_accuracy"].as_f64().unwrap() > 0.9);

    for (workers, out) in [("1", "prob1.vsv"), ("2", "prob2.vsv")] {
        let mut detect = vec!["detect", "--model", "m.vrf", "--workers", workers, "--out", out];
        detect.extend(common);
        ok(&detect, d);
    }
    assert_eq!(std::fs::read(d.join("prob1.vsv")).unwrap(), std::fs::read(d.join("prob2.vsv")).unwrap());

    ok(&["fuse", "--prob", "prob1.vsv", "--out", "det.json"], d);
    ok(&["eval", "--detected", "det.json", "--truth", "p/truth.json", "--out", "pr.csv"], d);
    let r = record(d.join("pr.csv.run.json"));
    assert!(r["summary"]["tp"].as_u64().unwrap() >= 2, "{r}");

    ok(&["sweep", "--prob", "prob1.vsv", "--truth", "p/truth.json", "--min3d", "100,500", "--out", "sweep.csv"], d);
    let rows = std::fs::read_to_string(d.join("sweep.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 11 * 4 * 3 * 2 * 5);

    let blocks = [
        "blocks-run", "--em", "p/em.vsv", "--membrane", "p/membrane.vsv", "--model", "m.vrf", "--block-size",
        "128,128,40", "--pad", "32,32,5", "--out", "run",
    ];
    ok(&blocks, d);
    assert_eq!(record(d.join("run/run.json"))["summary"]["blocks"], 4);
    let merged = std::fs::read(d.join("run/merged.json")).unwrap();
    let mut resume = blocks.to_vec();
    resume.push("--resume");
    ok(&resume, d);
    assert_eq!(record(d.join("run/run.json"))["summary"]["reused"], 4);
    assert_eq!(std::fs::read(d.join("run/merged.json")).unwrap(), merged);

    ok(&["render", "--em", "p/em.vsv", "--detected", "det.json", "--truth", "p/truth.json", "--z", "20", "--out", "a.png"], d);
    ok(&["render", "--em", "p/em.vsv", "--detected", "det.json", "--truth", "p/truth.json", "--z", "20", "--out", "b.png"], d);
    assert_eq!(std::fs::read(d.join("a.png")).unwrap(), std::fs::read(d.join("b.png")).unwrap());
}
