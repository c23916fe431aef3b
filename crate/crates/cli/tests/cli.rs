use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "synth.classes=4",
    "--set",
    "synth.sequences_per_class=3",
    "--set",
    "synth.test_sequences_per_class=1",
    "--set",
    "synth.frames_per_sequence=4",
    "--set",
    "train.embed_epochs=2",
    "--set",
    "train.max_epochs=2",
    "--set",
    "train.lr_decay_epochs=2",
];

fn reid(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reid"))
        .args(args)
        .args(SMALL)
        .current_dir(cwd)
        .env_remove("REID_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = reid(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_train_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--output", "ds"], d);
    ok(&["train-embedding", "--data", "ds", "--output", "emb"], d);
    for f in ["embedding.ckpt", "train_log.jsonl", "metrics.json", "cmc.csv", "resolved_config.toml"] {
        assert!(d.join("emb").join(f).is_file(), "missing {f}");
    }
    let log = std::fs::read_to_string(d.join("emb/train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    ok(
        &["evaluate", "--data", "ds", "--checkpoint", "emb/embedding.ckpt", "--mode", "single_shot", "--output", "ev"],
        d,
    );
    let m = read_json(&d.join("ev/metrics.json"));
    let top1 = m["top1"].as_f64().expect("top1 present");
    assert!((0.0..=1.0).contains(&top1));
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["mode"], "single_shot");
    let cmc = std::fs::read_to_string(d.join("ev/cmc.csv")).unwrap();
    assert_eq!(cmc.lines().next(), Some("k,topk"));
    assert_eq!(cmc.lines().count(), 1 + 4);
}

#[test]
fn sequence_training_and_repeat_evaluation_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--output", "ds"], d);
    ok(&["train-embedding", "--data", "ds", "--output", "emb"], d);
    ok(&["train-sequence", "--data", "ds", "--embedding", "emb/embedding.ckpt", "--output", "seq"], d);
    let m = read_json(&d.join("seq/metrics.json"));
    assert_eq!(m["mode"], "multi_shot");
    assert_eq!(m["probes"], 4);

    for out in ["a", "b"] {
        ok(&["evaluate", "--data", "ds", "--checkpoint", "seq/model.ckpt", "--output", out], d);
    }
    for f in ["metrics.json", "cmc.csv"] {
        let a = std::fs::read(d.join("a").join(f)).unwrap();
        let b = std::fs::read(d.join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
}

#[test]
fn synth_is_reproducible_from_its_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--seed", "5", "--output", "one"], d);
    ok(&["synth", "--config", "one/resolved_config.toml", "--output", "two"], d);
    for f in ["person_002/seq_003/frame_004.png", "splits.csv"] {
        assert_eq!(std::fs::read(d.join("one").join(f)).unwrap(), std::fs::read(d.join("two").join(f)).unwrap());
    }
}

#[test]
fn ablation_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--output", "ds"], d);
    ok(&["train-embedding", "--data", "ds", "--output", "src", "--set", "train.embed_epochs=1"], d);
    ok(
        &[
            "ablate", "--data", "ds", "--source", "src/embedding.ckpt", "--k", "0..4", "--treatment", "frozen",
            "--set", "transfer.seeds=[0,1]", "--set", "train.embed_epochs=1", "--output", "ab",
        ],
        d,
    );
    let csv = std::fs::read_to_string(d.join("ab/sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("method,treatment,k,seed,top1"));
    let rows: Vec<&str> = lines.collect();
    let methods = 2;
    let seeds = 2;
    assert_eq!(rows.len(), 5 * methods * seeds);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("frozen")));
}

#[test]
fn transfer_writes_plan_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--output", "ds"], d);
    ok(&["train-embedding", "--data", "ds", "--output", "src", "--set", "train.embed_epochs=1"], d);
    ok(
        &["transfer", "--data", "ds", "--source", "src/embedding.ckpt", "--k", "2", "--output", "tr", "--set", "train.embed_epochs=1"],
        d,
    );
    let plan = read_json(&d.join("tr/plan.json"));
    let directives = plan["directives"].as_array().unwrap();
    assert_eq!(directives.len(), 8);
    assert_eq!(directives[1][1]["action"], "copy_frozen");
    assert_eq!(directives[2][1]["action"], "copy_fast");
    assert!(d.join("tr/embedding.ckpt").is_file());
}

#[test]
fn preprocess_leaves_input_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--output", "ds"], d);
    let before: Vec<_> = walk(&d.join("ds"));
    ok(&["preprocess", "--data", "ds", "--output", "pre"], d);
    assert_eq!(walk(&d.join("ds")), before);
    assert!(d.join("pre/manifest.json").is_file());
    assert!(d.join("pre/previews/person_001/seq_001/frame_001.png").is_file());
    let out = reid(&["preprocess", "--data", "ds", "--output", "ds"], d);
    assert_eq!(out.status.code(), Some(1));
}

fn walk(root: &Path) -> Vec<(std::path::PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in std::fs::read_dir(&p).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.clone(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn exit_codes_and_error_lines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = reid(&["frobnicate"], d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = reid(&["synth", "--no-such-flag"], d);
    assert_eq!(out.status.code(), Some(2));

    let out = reid(&["synth", "--output", "x", "--set", "train.rho=0"], d);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with("error[config]:") && lines[0].contains("train.rho"), "{err}");

    let out = reid(&["synth", "--output", "x", "--set", "synth.nope=1"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("synth.nope"));

    let bad = d.join("bad.toml");
    std::fs::write(&bad, "[train]\nmomentum = 1.5\n").unwrap();
    let out = reid(&["synth", "--output", "x", "--config", bad.to_str().unwrap()], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.momentum"));

    let out = reid(&["evaluate", "--data", "missing", "--checkpoint", "missing.ckpt", "--output", "x"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error["));
}

#[test]
fn default_output_root_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_reid"))
        .args(["synth"])
        .args(SMALL)
        .current_dir(dir.path())
        .env("REID_OUTPUT_ROOT", "elsewhere")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("elsewhere/synth/splits.csv").is_file());
}
