use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gazetarget::harness::read_loss_csv;

fn run(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gazetarget"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn gazetarget")
}

fn ok(workdir: &Path, args: &[&str]) -> String {
    let out = run(workdir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(read_tree(&p));
        } else {
            out.push((p.display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn generate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    ok(w, &["generate", "--scenes", "20", "--seed", "7", "--out", "a"]);
    ok(w, &["generate", "--scenes", "20", "--seed", "7", "--out", "b"]);
    let strip = |v: Vec<(String, Vec<u8>)>, p: &str| -> Vec<(String, Vec<u8>)> {
        v.into_iter().map(|(n, b)| (n.replacen(p, "", 1), b)).collect()
    };
    let a = strip(read_tree(&w.join("a")), &w.join("a").display().to_string());
    let b = strip(read_tree(&w.join("b")), &w.join("b").display().to_string());
    assert_eq!(a.len(), 21);
    assert_eq!(a, b);
}

#[test]
fn generate_zero_scenes_writes_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "--scenes", "0"]);
    assert_eq!(fs::read(dir.path().join("data/annotations.jsonl")).unwrap(), b"");
}

#[test]
fn generated_out_of_frame_fraction_follows_probability() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "--scenes", "1000", "--p-oof", "0.3", "--image-size", "32"]);
    let text = fs::read_to_string(dir.path().join("data/annotations.jsonl")).unwrap();
    let (mut n, mut oof) = (0, 0);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        n += 1;
        oof += v["out_of_frame"].as_bool().unwrap() as usize;
    }
    let frac = oof as f64 / n as f64;
    assert!(n > 500);
    assert!((frac - 0.3).abs() <= 0.05, "{frac}");
}

#[test]
fn usage_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let out = run(w, &["train", "--data", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(run(w, &["eval", "--checkpoint", "nope.json", "--data", "x"]).status.code(), Some(2));
    assert_eq!(run(w, &["generate", "--no-such-flag"]).status.code(), Some(2));
}

#[test]
fn oracle_eval_is_ideal() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    ok(w, &["generate", "--scenes", "30", "--p-oof", "0.3"]);
    let out = ok(w, &["eval", "--oracle", "--data", "data/annotations.jsonl"]);
    assert!(out.contains("AUC"), "{out}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(w.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["map_instance"], 1.0);
    assert_eq!(report["avg_dist"], 0.0);
    assert_eq!(report["min_dist"], 0.0);
    assert_eq!(report["auc"], 1.0);
    assert_eq!(report["oof_ap"], 1.0);
}

#[test]
fn train_eval_visualize_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    ok(w, &["generate", "--scenes", "6", "--image-size", "32", "--seed", "3"]);
    let train = [
        "train", "--data", "data/annotations.jsonl", "--backbone", "tiny", "--epochs", "3",
        "--batch-size", "2", "--seed", "5",
    ];
    ok(w, &[&train[..], &["--out", "run"]].concat());
    ok(w, &[&train[..], &["--out", "again"]].concat());
    assert_eq!(
        fs::read(w.join("run/loss.csv")).unwrap(),
        fs::read(w.join("again/loss.csv")).unwrap()
    );
    let rows = read_loss_csv(&w.join("run/loss.csv")).unwrap();
    assert_eq!(rows.len(), 9);
    for k in 1..=3 {
        assert!(w.join(format!("run/checkpoint-epoch-{k:03}.json")).exists());
    }

    // Resuming from epoch 1 reproduces the uninterrupted log.
    fs::create_dir(w.join("resumed")).unwrap();
    let head: Vec<String> = fs::read_to_string(w.join("run/loss.csv")).unwrap().lines().take(4).map(String::from).collect();
    fs::write(w.join("resumed/loss.csv"), head.join("\n") + "\n").unwrap();
    ok(w, &[&train[..], &["--out", "resumed", "--resume", "run/checkpoint-epoch-001.json"]].concat());
    assert_eq!(read_loss_csv(&w.join("resumed/loss.csv")).unwrap(), rows);

    // A checkpoint for another model is refused.
    let bad = run(w, &["train", "--data", "data/annotations.jsonl", "--backbone", "compact", "--resume", "run/last.json", "--out", "bad"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("incompatible checkpoint"), "{}", String::from_utf8_lossy(&bad.stderr));

    let eval = ["eval", "--checkpoint", "run/last.json", "--data", "data/annotations.jsonl"];
    ok(w, &[&eval[..], &["--dump-predictions", "preds.jsonl", "--report", "direct.json"]].concat());
    ok(w, &["eval", "--rescore", "preds.jsonl", "--report", "rescored.json"]);
    ok(w, &[&eval[..], &["--report", "second.json"]].concat());
    let direct = fs::read_to_string(w.join("direct.json")).unwrap();
    assert_eq!(direct, fs::read_to_string(w.join("rescored.json")).unwrap());
    assert_eq!(direct, fs::read_to_string(w.join("second.json")).unwrap());

    let scene = "images/synth-3-000000.png";
    let out = run(w, &["visualize", "--checkpoint", "run/last.json", "--data", "data/annotations.jsonl", "--scene-id", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    ok(w, &["visualize", "--checkpoint", "run/last.json", "--data", "data/annotations.jsonl", "--scene-id", scene, "--max-instances", "1", "--out", "one"]);
    let pngs = fs::read_dir(w.join("one")).map(|d| d.count()).unwrap_or(0);
    assert!(pngs <= 1);
}

#[test]
fn env_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gazetarget"))
        .args(["generate", "--scenes", "2"])
        .env("GAZETARGET_WORKDIR", dir.path())
        .env("GAZETARGET_OUT", "from-env")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("from-env/annotations.jsonl").exists());
}

#[test]
fn convert_gazefollow_csv() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    fs::write(w.join("gf.csv"), "img/a.jpg,0,0,0,10,10,0.5,0.5,0.25,0.75,10,20,30,40,1\nimg/a.jpg,1,0,0,10,10,0.5,0.5,0.6,0.5,10,20,30,40,1\n").unwrap();
    let out = ok(w, &[
        "convert", "--format", "gazefollow", "--input", "gf.csv", "--image-root", ".",
        "--fallback-size", "100x100", "--out", "conv.jsonl",
    ]);
    assert!(out.contains("converted 1 images, 2 annotations"), "{out}");
}
