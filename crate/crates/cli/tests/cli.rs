use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use tempfile::TempDir;

fn coner() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_coner"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str], dir: &Path) -> Output {
    coner().args(args).current_dir(dir).output().expect("spawn coner")
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = run(args, dir);
    assert!(
        out.status.success(),
        "coner {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Small corpus plus DK table in a fresh directory.
fn fixture(conversations: usize) -> TempDir {
    let dir = TempDir::new().unwrap();
    let n = conversations.to_string();
    ok(
        &["synth", "--out", "c.jsonl", "--conversations", &n, "--seed", "5"],
        dir.path(),
    );
    ok(&["dk-extract", "--corpus", "c.jsonl", "--out", "dk.json"], dir.path());
    dir
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

fn train(dir: &Path, tag: &str, extra: &[&str]) -> (PathBuf, PathBuf) {
    let ckpt = format!("{tag}.ckpt");
    let log = format!("{tag}.csv");
    let mut args = vec!["train", "--corpus", "c.jsonl", "--checkpoint", &ckpt, "--log", &log];
    args.extend_from_slice(extra);
    ok(&args, dir);
    (dir.join(ckpt), dir.join(log))
}

#[test]
fn help_lists_subcommands_and_flags() {
    let out = coner().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["synth", "dk-extract", "train", "predict", "eval", "sweep"] {
        assert!(text.contains(cmd), "missing {cmd} in help");
    }
    let out = coner().args(["train", "--help"]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in [
        "--config",
        "--preset",
        "--seed",
        "--window",
        "--set",
        "--episodes",
        "--lr",
        "--gamma",
    ] {
        assert!(text.contains(flag), "missing {flag} in train help");
    }
}

#[test]
fn usage_errors_exit_with_one() {
    let out = coner().args(["train", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let dir = TempDir::new().unwrap();
    let out = run(&["dk-extract", "--corpus", "x.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(1), "missing --out is a usage error");
    let out = run(&["synth", "--out", "c.jsonl", "--set", "trainer.gamma=3"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["synth", "--out", "c.jsonl", "--preset", "huge"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("bad.jsonl"), "{not json\n").unwrap();
    let out = run(&["dk-extract", "--corpus", "bad.jsonl", "--out", "dk.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = run(
        &["dk-extract", "--corpus", "absent.jsonl", "--out", "dk.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_writes_manifest_and_dk_extract_writes_table() {
    let dir = fixture(12);
    let manifest: serde_json::Value = serde_json::from_slice(&read(dir.path(), "c.manifest.json")).unwrap();
    assert_eq!(manifest["dim_audio"], 8);
    let dk: serde_json::Value = serde_json::from_slice(&read(dir.path(), "dk.json")).unwrap();
    assert_eq!(dk["window"], 3);
    assert!(!dk["rows"].as_array().unwrap().is_empty());
    for row in dk["rows"].as_array().unwrap() {
        let counts: u64 = row["counts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c.as_u64().unwrap())
            .sum();
        assert_eq!(row["total"].as_u64().unwrap(), counts);
    }
}

#[test]
fn synth_is_deterministic() {
    let dir = TempDir::new().unwrap();
    ok(
        &["synth", "--out", "a.jsonl", "--conversations", "5", "--seed", "9"],
        dir.path(),
    );
    ok(
        &["synth", "--out", "b.jsonl", "--conversations", "5", "--seed", "9"],
        dir.path(),
    );
    assert_eq!(read(dir.path(), "a.jsonl"), read(dir.path(), "b.jsonl"));
}

#[test]
fn training_is_byte_reproducible() {
    let dir = fixture(10);
    let flags = ["--episodes", "4", "--seed", "3", "--batch-size", "8"];
    let (c1, l1) = train(dir.path(), "one", &flags);
    let (c2, l2) = train(dir.path(), "two", &flags);
    assert_eq!(std::fs::read(&l1).unwrap(), std::fs::read(&l2).unwrap());
    let blob = |p: &Path| std::fs::read(p.with_extension("ckpt.bin")).unwrap();
    assert_eq!(blob(&c1), blob(&c2));
    let (c3, _) = train(
        dir.path(),
        "three",
        &["--episodes", "4", "--seed", "4", "--batch-size", "8"],
    );
    assert_ne!(blob(&c1), blob(&c3));
}

#[test]
fn explicit_flags_beat_set_which_beats_config_file() {
    let dir = fixture(10);
    std::fs::write(
        dir.path().join("run.toml"),
        "seed = 3\n[trainer]\nepisodes = 2\nbatch_size = 8\nlr = 0.5\n",
    )
    .unwrap();
    // --set overrides the file's lr; --lr overrides --set.
    let (a, _) = train(
        dir.path(),
        "a",
        &["--config", "run.toml", "--set", "trainer.lr=0.01", "--lr", "0.002"],
    );
    let (b, _) = train(dir.path(), "b", &["--config", "run.toml", "--lr", "0.002"]);
    let (c, _) = train(dir.path(), "c", &["--config", "run.toml", "--set", "trainer.lr=0.002"]);
    let (d, _) = train(dir.path(), "d", &["--config", "run.toml", "--set", "trainer.lr=0.01"]);
    let blob = |p: &Path| std::fs::read(p.with_extension("ckpt.bin")).unwrap();
    assert_eq!(blob(&a), blob(&b));
    assert_eq!(blob(&a), blob(&c));
    assert_ne!(blob(&a), blob(&d));
}

fn stream(dir: &Path, input: &str) -> Vec<serde_json::Value> {
    let mut child = coner()
        .args(["predict", "--stream", "--checkpoint", "m.ckpt", "--dk", "dk.json"])
        .current_dir(dir)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn stream_prediction_counts_and_fields() {
    let dir = fixture(10);
    train(dir.path(), "m", &["--episodes", "1", "--batch-size", "4"]);
    let corpus = String::from_utf8(read(dir.path(), "c.jsonl")).unwrap();
    let lines: Vec<&str> = corpus.lines().collect();
    let first: Vec<&str> = lines
        .iter()
        .copied()
        .take_while(|l| l.contains("\"synth-00000\""))
        .collect();
    let n = first.len();
    let recs = stream(dir.path(), &(first.join("\n") + "\n"));
    assert_eq!(recs.len(), n - 3, "labeled conversations skip the given first w");
    for (k, r) in recs.iter().enumerate() {
        assert_eq!(r["turn_index"], 3 + k);
        assert_eq!(r["conversation_id"], "synth-00000");
        let label = r["label"].as_u64().unwrap() as usize;
        let revised: Vec<f64> = r["revised"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect();
        let best = (0..6).fold(0, |b, i| if revised[i] > revised[b] { i } else { b });
        assert_eq!(label, best);
        let s: f64 = r["scores"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    // Without labels the conversation runs label-free and every turn is predicted.
    let unlabeled: Vec<String> = first
        .iter()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("label");
            v.to_string()
        })
        .collect();
    let recs = stream(dir.path(), &(unlabeled.join("\n") + "\n"));
    assert_eq!(recs.len(), n);
}

#[test]
fn predict_from_corpus_matches_stream() {
    let dir = fixture(6);
    train(dir.path(), "m", &["--episodes", "1", "--batch-size", "4"]);
    ok(
        &[
            "predict",
            "--checkpoint",
            "m.ckpt",
            "--dk",
            "dk.json",
            "--corpus",
            "c.jsonl",
            "--out",
            "p.jsonl",
        ],
        dir.path(),
    );
    let corpus = String::from_utf8(read(dir.path(), "c.jsonl")).unwrap();
    let streamed = stream(dir.path(), &corpus);
    let file: Vec<serde_json::Value> = String::from_utf8(read(dir.path(), "p.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(file, streamed);
}

#[test]
fn eval_writes_report_and_confusion() {
    let dir = fixture(20);
    train(dir.path(), "m", &["--episodes", "1", "--batch-size", "4"]);
    let out = ok(
        &[
            "eval",
            "--checkpoint",
            "m.ckpt",
            "--dk",
            "dk.json",
            "--corpus",
            "c.jsonl",
            "--report",
            "r.json",
            "--confusion",
            "cm.csv",
            "--revision",
            "corr-only",
        ],
        dir.path(),
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("accuracy over predicted utterances"));
    assert!(text.contains("accuracy counting given utterances"));
    let report: serde_json::Value = serde_json::from_slice(&read(dir.path(), "r.json")).unwrap();
    assert_eq!(report["revision"], "corr-only");
    let scored = report["scored"].as_u64().unwrap();
    let total = report["total_utterances"].as_u64().unwrap();
    // The test split holds two conversations of 20 turns each.
    assert_eq!((scored, total), (34, 40));
    let cm = String::from_utf8(read(dir.path(), "cm.csv")).unwrap();
    assert_eq!(cm.lines().count(), 7);
}

#[test]
fn sweep_is_reproducible_and_has_table_shape() {
    let dir = fixture(16);
    let args = [
        "sweep",
        "--corpus",
        "c.jsonl",
        "--out",
        "s.csv",
        "--windows",
        "2,3",
        "--seeds",
        "1,2",
        "--episodes",
        "1",
        "--set",
        "trainer.batch_size=4",
        "--threads",
        "2",
    ];
    ok(&args, dir.path());
    let first = read(dir.path(), "s.csv");
    let first_std = read(dir.path(), "s.std.csv");
    ok(&args, dir.path());
    assert_eq!(first, read(dir.path(), "s.csv"));
    assert_eq!(first_std, read(dir.path(), "s.std.csv"));
    let text = String::from_utf8(first).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "w,overall,happy,sad,neutral,angry,excited,frustrated");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2,") && lines[2].starts_with("3,"));
    // One thread gives the same rows.
    let mut single = args.to_vec();
    *single.last_mut().unwrap() = "1";
    single[4] = "t.csv";
    ok(&single, dir.path());
    assert_eq!(text.as_bytes(), read(dir.path(), "t.csv"));
}
