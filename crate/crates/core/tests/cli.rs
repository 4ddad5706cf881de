use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spikmamba::cli::RunConfig;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spikmamba"));
    c.arg("--threads").arg("1");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn spikmamba")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const MODEL: &str = r#"
[model]
d_model = 8
n_blocks = 1
window = 2
d_inner = 16
d_state = 4
ffn_hidden = 16
n_classes = 2
frames = 4
height = 16
width = 16
"#;

/// Writes a config for a tiny two-class run rooted at `dir`.
fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let text = format!(
        "{MODEL}\n[train]\nepochs = 2\nbatch_size = 4\nlr_max = 0.001\nlr_min = 0.0001\n\n\
         [data]\ntrain = \"data/manifest.jsonl\"\n\n\
         [data.synthetic]\nn_per_class = 3\nclasses = [\"left\", \"right\"]\n\
         duration_us = 20000\nsensor_height = 16\nsensor_width = 16\n\n{extra}"
    );
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn synth(dir: &Path) -> PathBuf {
    let cfg = write_config(dir, "synth.toml", "[output]\ndir = \"data\"\n");
    let o = run(&["synth", "--config", cfg.to_str().unwrap(), "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("data/manifest.jsonl")
}

#[test]
fn synth_writes_manifest_events_and_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let lines: Vec<_> = std::fs::read_to_string(&manifest)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(lines.len(), 6);
    for l in &lines {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(dir.path().join("data").join(v["path"].as_str().unwrap()).is_file());
    }
    let echo = RunConfig::load(&dir.path().join("data/config.toml")).unwrap();
    assert_eq!(echo.train.seed, Some(4));

    let cfg = dir.path().join("synth.toml");
    let again = run(&["synth", "--config", cfg.to_str().unwrap(), "--seed", "4"]);
    assert_eq!(again.status.code(), Some(2), "{}", stderr(&again));
    assert!(stderr(&again).contains("--force"));
    let forced = run(&["synth", "--config", cfg.to_str().unwrap(), "--seed", "4", "--force"]);
    assert!(forced.status.success(), "{}", stderr(&forced));
    assert_eq!(std::fs::read_to_string(&manifest).unwrap().lines().count(), 6);
}

#[test]
fn synth_rejects_bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.toml");
    std::fs::write(&empty, "[data.synthetic]\nn_per_class = 0\n[output]\ndir = \"out\"\n").unwrap();
    let o = run(&["synth", "--config", empty.to_str().unwrap(), "--seed", "1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("empty dataset"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "c.toml", "[output]\ndir = \"d\"\n");
    let o = run(&["synth", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));

    let typo = dir.path().join("typo.toml");
    std::fs::write(&typo, "[model]\nd_modle = 8\n").unwrap();
    let o = run(&["count", "--config", typo.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("d_modle"), "{}", stderr(&o));

    let o = run(&["synth"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_then_eval_reproduces_logged_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let cfg = write_config(dir.path(), "train.toml", "[output]\ndir = \"run\"\n");
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--seed", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("epoch")).count(), 2);

    let run_dir = dir.path().join("run");
    for f in ["initial.ckpt", "best.ckpt", "last.ckpt", "log.jsonl", "config.toml"] {
        assert!(run_dir.join(f).is_file(), "{f} missing");
    }
    let log = std::fs::read_to_string(run_dir.join("log.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    let logged = last["train_acc"].as_f64().unwrap();

    let manifest = dir.path().join("data/manifest.jsonl");
    let ckpt = run_dir.join("last.ckpt");
    let o = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        manifest.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), format!("accuracy: {logged:.4}"));

    let o = run(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        manifest.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), format!("accuracy: {logged:.4}"));

    let wide = dir.path().join("wide.toml");
    std::fs::write(&wide, MODEL.replace("d_model = 8", "d_model = 12")).unwrap();
    let o = run(&[
        "eval",
        "--config",
        wide.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        manifest.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("~ patch.conv.weight"), "{}", stderr(&o));

    let again = run(&["train", "--config", cfg.to_str().unwrap(), "--seed", "9"]);
    assert_eq!(again.status.code(), Some(2));

    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        empty.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty dataset"));

    let out = dir.path().join("maps");
    let clip = dir.path().join("data/events/sample_00000.evs");
    let o = run(&[
        "export-attention",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--events",
        clip.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for t in 0..4 {
        let bytes = std::fs::read(out.join(format!("frame_{t:03}.pgm"))).unwrap();
        let header = b"P5\n16 16\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 256);
    }
}

#[test]
fn count_prints_ledger_and_published_figure() {
    let o = run(&["count", "--preset", "tiny"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("parameters: 3090"), "{s}");
    assert!(s.contains("0.000047"), "{s}");
    assert!(!s.contains("0.18M"));

    let o = run(&["count", "--preset", "paper"]);
    let s = stdout(&o);
    assert!(s.contains("published parameter count: 0.18M"), "{s}");
    assert!(s.contains("note:"), "{s}");
}
