//! Contract tests against the compiled binary itself: subcommand wiring,
//! exit codes, and the artifacts each stage leaves on disk.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prunelens"))
}

/// A deliberately tiny experiment so the whole pipeline runs in seconds.
fn write_tiny_config(dir: &Path) -> PathBuf {
    let out_dir = dir.join("run");
    let cfg = format!(
        r#"
seed = 3
out_dir = {out_dir:?}

[dataset]
n_train = 24
n_test = 10
image_size = 16
classes = ["circle", "square"]
textured_background = true

[model]
family = "cnn"
widths = [4, 6]

[schedule]
epochs = 1
batch_size = 8
base_lr = 0.05
momentum = 0.9
decay_at = 1
decay_factor = 0.1

[pruning]
k = 0.5
target_sparsity = 0.7

[attribution]
methods = ["gradcam", "ig"]
ig_steps = 4
n_images = 4

[distortions]
plans = [{{ kind = "greyscale", levels = [0.0, 1.0] }}]
"#
    );
    let path = dir.join("tiny.toml");
    std::fs::write(&path, cfg).expect("write config");
    path
}

#[test]
fn pipeline_stages_leave_their_artifacts_and_exit_zero() {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli_contract");
    if dir.exists() {
        std::fs::remove_dir_all(&dir).expect("wipe");
    }
    std::fs::create_dir_all(&dir).expect("mkdir");
    let cfg = write_tiny_config(&dir);
    let run = dir.join("run");

    let out = bin().args(["gen-data", "--config"]).arg(&cfg).output().expect("spawn");
    assert_eq!(out.status.code(), Some(0), "gen-data: {}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("data").join("train.safetensors").exists());
    assert!(run.join("data").join("test.safetensors").exists());

    let out = bin().args(["prune-sweep", "--config"]).arg(&cfg).output().expect("spawn");
    assert_eq!(out.status.code(), Some(0), "prune-sweep: {}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("pool").join("manifest.json").exists());
    // k=0.5 to 0.7: two pruning rounds -> dense + 2 entries.
    for n in 0..3 {
        let entry = run.join("pool").join(format!("entry_{n:03}"));
        assert!(entry.join("model.safetensors").exists());
        assert!(entry.join("mask.safetensors").exists());
    }

    let out = bin().args(["sweep", "--resume", "--config"]).arg(&cfg).output().expect("spawn");
    assert_eq!(out.status.code(), Some(0), "sweep: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(run.join("report").join("report.csv")).expect("report");
    assert!(csv.starts_with(
        "config_hash,entry,sparsity_prunable,sparsity_all,task,method,kind,level,mean,std,n,degenerate\n"
    ));
    // 3 entries x (1 accuracy + 2 methods x 2 metrics + 2 od + 2 ha) = 27 rows.
    assert_eq!(csv.lines().count(), 1 + 27, "csv:\n{csv}");

    // A resumed sweep reuses the evaluation cache; --verify-cache recomputes
    // a sample of the hits and reports doing so.
    let out = bin()
        .args(["sweep", "--resume", "--verify-cache", "--config"])
        .arg(&cfg)
        .output()
        .expect("spawn");
    assert_eq!(out.status.code(), Some(0), "resumed sweep: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("cache check"), "verify-cache should report: {stdout}");

    // Attribution containers for a specific entry.
    let out = bin()
        .args(["attribute", "--entry", "1", "--methods", "gradcam", "--png", "--config"])
        .arg(&cfg)
        .output()
        .expect("spawn");
    assert_eq!(out.status.code(), Some(0), "attribute: {}", String::from_utf8_lossy(&out.stderr));
    let saliency = run.join("saliency").join("entry_001");
    assert!(saliency.join("gradcam.safetensors").exists());
    assert!(saliency.join("gradcam.json").exists());
    assert!(saliency.join("gradcam").join("img_000.png").exists());
}

#[test]
fn missing_config_file_is_a_hard_error() {
    let out = bin()
        .args(["sweep", "--config", "/nonexistent/nowhere.toml"])
        .output()
        .expect("spawn");
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn rejects_unknown_config_keys() {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli_badkey");
    std::fs::create_dir_all(&dir).expect("mkdir");
    let path = dir.join("bad.toml");
    std::fs::write(&path, "definitely_not_a_key = 1\n").expect("write");
    let out = bin().args(["gen-data", "--config"]).arg(&path).output().expect("spawn");
    assert_eq!(out.status.code(), Some(1));
}
