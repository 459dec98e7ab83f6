//! End-to-end checks of the command-line binary: exit codes, artifacts on
//! disk, logging control, and byte-stable reruns.

use std::path::Path;
use std::process::{Command, Output};

fn mfpn() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mfpn"));
    cmd.env("MFPN_LOG", "quiet");
    cmd
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("exp.cfg");
    std::fs::write(&path, body).unwrap();
    path
}

const TINY: &str = "\
builder: mfpn
levels: 2..5
channels: 2
backbone_channels: 2, 2, 2, 2
image_size: 128
blobs.small: 1
blobs.medium: 1
blobs.large: 1
lr: 0.05
scenes: 10
seed: 3
";

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn argument_errors_exit_two() {
    let out = mfpn().arg("--bogus").arg("paramcount").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = mfpn().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    // Evaluating without trained weights is a runtime failure.
    let cfg = write_config(dir.path(), TINY);
    let out = mfpn()
        .args(["eval", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("weights"));

    // Invalid config values are rejected with a diagnostic.
    let bad = write_config(dir.path(), "channels: 0\n");
    let out = mfpn()
        .args(["paramcount", "--config"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = mfpn()
        .args(["paramcount", "--preset", "bogus"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gradcheck_succeeds_quietly() {
    let out = mfpn().args(["gradcheck", "--seed", "0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout_of(&out).contains("all gradient checks passed"));
    assert!(out.stderr.is_empty(), "quiet mode must not log");
}

#[test]
fn info_logging_echoes_the_config() {
    let out = Command::new(env!("CARGO_BIN_EXE_mfpn"))
        .env("MFPN_LOG", "info")
        .args(["paramcount", "--preset", "toy"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("effective config"));
    assert!(stderr.contains("builder: mfpn"));
}

#[test]
fn train_eval_and_rerun_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out_dir in [&out_a, &out_b] {
        let out = mfpn()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out_dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["loss.csv", "weights.mfpw", "state.txt"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }
    // The saved config records the effective output directory, which is the
    // one field that legitimately differs between the two runs.
    let strip_out = |dir: &Path| -> String {
        std::fs::read_to_string(dir.join("config.cfg"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("out:"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip_out(&out_a), strip_out(&out_b));
    let loss = std::fs::read_to_string(out_a.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 11, "header plus one row per step");
    assert!(loss.starts_with("step,loss\n"));
    assert!(out_a.join("weights_epoch0.mfpw").exists());

    let out = mfpn()
        .args(["eval", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_a)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let eval = std::fs::read_to_string(out_a.join("eval.csv")).unwrap();
    assert!(eval.starts_with("class,precision,recall,f1\n"));
    assert_eq!(eval.lines().count(), 4, "header plus one row per size class");
}

#[test]
fn heatmap_emits_both_builders_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let run = |out_dir: &Path| {
        let out = mfpn()
            .args(["heatmap", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out_dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    };
    let out_a = dir.path().join("a");
    run(&out_a);
    let mut files: Vec<String> = std::fs::read_dir(out_a.join("heatmap"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    let mut expected = Vec::new();
    for prefix in ["top-down", "mfpn"] {
        for level in 2..=5 {
            expected.push(format!("{prefix}_L{level}.csv"));
            expected.push(format!("{prefix}_L{level}.pgm"));
        }
    }
    expected.sort();
    assert_eq!(files, expected);

    for name in &files {
        if name.ends_with(".pgm") {
            let bytes = std::fs::read(out_a.join("heatmap").join(name)).unwrap();
            assert!(bytes.starts_with(b"P5\n"), "{name} is not binary PGM");
        }
    }

    // Same seed, fresh directory: byte-identical artifacts.
    let out_b = dir.path().join("b");
    run(&out_b);
    for name in &files {
        let a = std::fs::read(out_a.join("heatmap").join(name)).unwrap();
        let b = std::fs::read(out_b.join("heatmap").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }
}

#[test]
fn paramcount_config_and_flow_work_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = mfpn()
        .args(["paramcount", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(stdout_of(&out).contains("parameter report: mfpn"));
    assert!(dir.path().join("paramcount_mfpn.txt").exists());
    assert!(dir.path().join("paramcount_mfpn.json").exists());

    let out = mfpn()
        .args(["flow", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    for kind in ["top-down", "bottom-up", "fusing-splitting", "mfpn"] {
        assert!(dir.path().join(format!("flow_{kind}.txt")).exists());
        assert!(stdout_of(&out).contains(&format!("flow matrix: {kind}")));
    }
}

/// Full tour; slow, so opt in with `cargo test -- --ignored`.
#[test]
#[ignore]
fn demo_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = mfpn().arg("demo").arg("--out").arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("comparison.csv").exists());
    let text = stdout_of(&out);
    assert!(text.contains("demo finished"));
    assert!(text.contains("held-out comparison"));
}
