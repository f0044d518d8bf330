use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use sha2::{Digest, Sha256};
use tempfile::TempDir;

const CONFIG: &str = r#"
preset = "dsprites"
seed = 7

[data]
samples_per_combination = 50
size = 16
tau = 30

[arch]
conv_channels = [4, 8]
mlp_width = 32

[train]
warmup_epochs = 2
full_epochs = 2
batch_absae = 64
batch_rel = 32
learning_rate = 1e-3
checkpoint_every = 0

[eval]
trials = 300
"#;

fn wdis(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("run.toml");
    if !config.exists() {
        fs::write(&config, CONFIG).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_wdis"))
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{stdout}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A generated dataset and a trained checkpoint shared by the tests.
fn trained() -> &'static Path {
    static RUN: OnceLock<TempDir> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        ok(wdis(dir.path(), &["generate"]));
        ok(wdis(dir.path(), &["train"]));
        dir
    })
    .path()
}

fn copy_run(src: &Path) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(src.join("run.toml"), dir.path().join("run.toml")).unwrap();
    fs::create_dir(dir.path().join("data")).unwrap();
    for f in ["images.bin", "labels.csv", "factors.txt"] {
        fs::copy(src.join("data").join(f), dir.path().join("data").join(f)).unwrap();
    }
    dir
}

fn csv_rows(path: PathBuf) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(str::to_string)
        .collect()
}

#[test]
fn generate_writes_counted_native_files() {
    let dir = trained();
    let bytes = fs::read(dir.join("data/images.bin")).unwrap();
    assert_eq!(&bytes[..4], b"WDIS");
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1350);
    assert_eq!(csv_rows(dir.join("data/labels.csv")).len(), 1350);
}

#[test]
fn generate_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = ok(wdis(a.path(), &["generate"]));
    assert!(out.contains("1350 images"), "{out}");
    ok(wdis(b.path(), &["generate"]));
    for f in ["images.bin", "labels.csv", "factors.txt"] {
        assert_eq!(
            fs::read(a.path().join("data").join(f)).unwrap(),
            fs::read(b.path().join("data").join(f)).unwrap(),
            "{f} differs"
        );
    }
    let c = tempfile::tempdir().unwrap();
    ok(wdis(c.path(), &["--seed", "8", "generate"]));
    assert_ne!(
        fs::read(a.path().join("data/images.bin")).unwrap(),
        fs::read(c.path().join("data/images.bin")).unwrap()
    );
}

#[test]
fn invalid_preset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = wdis(dir.path(), &["--preset", "mnist", "generate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("mnist"));
    let out = wdis(dir.path(), &["--set", "train.bogus=1", "generate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_checkpoint_and_history() {
    let dir = trained();
    let ck = fs::read(dir.join("checkpoint.wdck")).unwrap();
    assert_eq!(&ck[..4], b"WDCK");
    let history = csv_rows(dir.join("history.csv"));
    assert_eq!(history.len(), 4);
    assert!(history[0].starts_with("0,warmup,"));
    assert!(history[3].starts_with("3,full,"));
}

#[test]
fn train_without_dataset_fails_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = wdis(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("dataset not found"));
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let dir = copy_run(trained());
    let first = ok(wdis(dir.path(), &["train", "--until", "3"]));
    assert_eq!(first.lines().filter(|l| l.starts_with("epoch")).count(), 3);
    let second = ok(wdis(dir.path(), &["train", "--resume"]));
    assert!(second.contains("resuming from epoch 3"));
    assert_eq!(
        fs::read(dir.path().join("checkpoint.wdck")).unwrap(),
        fs::read(trained().join("checkpoint.wdck")).unwrap()
    );
    assert_eq!(
        fs::read(dir.path().join("history.csv")).unwrap(),
        fs::read(trained().join("history.csv")).unwrap()
    );
    let fresh = tempfile::tempdir().unwrap();
    let out = wdis(fresh.path(), &["train", "--resume"]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn eval_writes_table_sweeps_with_digest() {
    let run = trained();
    let dir = copy_run(run);
    fs::copy(run.join("checkpoint.wdck"), dir.path().join("checkpoint.wdck")).unwrap();
    let out = ok(wdis(dir.path(), &["eval", "--which", "all"]));
    assert!(out.contains("latent classification"));
    let reports = dir.path().join("reports");
    let cluster = csv_rows(reports.join("cluster_eval.csv"));
    assert_eq!(cluster.len(), 18);
    assert!(cluster[0].starts_with("dsprites,0,10,"));
    let relational = csv_rows(reports.join("relational_eval.csv"));
    assert_eq!(relational.len(), 18);
    let depths: Vec<&str> = relational.iter().map(|r| r.split(',').nth(2).unwrap()).collect();
    assert_eq!((depths[0], depths[6], depths[12]), ("1", "5", "10"));
    for r in cluster
        .iter()
        .chain(&relational)
        .filter(|r| r.split(',').nth(1) == Some("0"))
    {
        assert!(r.ends_with(",1.0000"), "{r}");
    }

    let report: serde_json::Value = serde_json::from_slice(&fs::read(reports.join("metrics.json")).unwrap()).unwrap();
    let digest = hex::encode(Sha256::digest(fs::read(dir.path().join("checkpoint.wdck")).unwrap()));
    assert_eq!(report["checkpoint_sha256"], digest.as_str());
    assert_eq!(report["seed"], 7);
    assert!(report["metrics"]["mig"].is_number());
    assert!(report["reconstruction_error"].is_number());

    let first = fs::read(reports.join("metrics.json")).unwrap();
    ok(wdis(dir.path(), &["eval", "--which", "all"]));
    assert_eq!(first, fs::read(reports.join("metrics.json")).unwrap());
}

#[test]
fn eval_subsets_and_failures() {
    let run = trained();
    let dir = copy_run(run);
    let ck = dir.path().join("model.wdck");
    fs::copy(run.join("checkpoint.wdck"), &ck).unwrap();
    let ck_arg = ck.to_str().unwrap();
    ok(wdis(dir.path(), &["eval", "--which", "recon", "--checkpoint", ck_arg]));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("reports/metrics.json")).unwrap()).unwrap();
    assert!(report.get("cluster").is_none());
    assert!(report["reconstruction_error"].is_number());

    let mut bytes = fs::read(&ck).unwrap();
    bytes[0] = b'X';
    let bad = dir.path().join("bad.wdck");
    fs::write(&bad, bytes).unwrap();
    let out = wdis(dir.path(), &["eval", "--checkpoint", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("checkpoint"), "{}", stderr(&out));

    let other = tempfile::tempdir().unwrap();
    ok(wdis(other.path(), &["--set", "data.size=24", "generate"]));
    let out = wdis(other.path(), &["--set", "data.size=24", "eval", "--checkpoint", ck_arg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("16×16×1"), "{}", stderr(&out));
}

#[test]
fn sample_renders_strips() {
    let run = trained();
    let dir = copy_run(run);
    fs::copy(run.join("checkpoint.wdck"), dir.path().join("checkpoint.wdck")).unwrap();
    let single = dir.path().join("single.png");
    ok(wdis(
        dir.path(),
        &[
            "sample",
            "--start",
            "center,center,square",
            "--output",
            single.to_str().unwrap(),
        ],
    ));
    let img = image::open(&single).unwrap();
    assert_eq!((img.width(), img.height()), (16, 16));

    let strip = dir.path().join("strip.png");
    ok(wdis(
        dir.path(),
        &[
            "sample",
            "--start",
            "center,center,square",
            "--chain",
            "move_up",
            "--output",
            strip.to_str().unwrap(),
        ],
    ));
    assert_eq!(image::open(&strip).unwrap().width(), 32);

    let out = wdis(
        dir.path(),
        &["sample", "--start", "left,center,square", "--chain", "move_left"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("step 1 (`move_left`)"), "{}", stderr(&out));
    let out = wdis(dir.path(), &["sample", "--start", "center,middle,square"]);
    assert_eq!(out.status.code(), Some(2));
}
