use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chunkcirc"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(
        &p,
        format!(
            "seed = 5\nout_dir = \"runs\"\n[corpus]\nsynth = \"separable\"\nn = 90\n[baseline]\nlr = 0.1\n\
             [seq]\nd_model = 16\nd_ff = 32\nmax_epochs = 4\n{extra}"
        ),
    )
    .unwrap();
    p
}

#[test]
fn synth_writes_tsv() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["synth", "--mode", "order-sensitive", "--n", "30", "--output", "c.tsv"], tmp.path());
    assert!(o.status.success());
    let text = std::fs::read_to_string(tmp.path().join("c.tsv")).unwrap();
    assert_eq!(text.lines().count(), 30);
    assert!(text.lines().all(|l| l.contains("; ") && l.contains('\t')));
}

#[test]
fn preprocess_prints_typed_chunks() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["preprocess", "--text", "Operating profit rose to EUR 13.1 mn from EUR 8.7 mn."], tmp.path());
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let chunks = v["chunks"].as_array().unwrap();
    assert!(!chunks.is_empty());
    assert!(chunks.iter().all(|c| c["labels"].as_array().unwrap().len() <= 5));
}

#[test]
fn bad_input_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "depth = 0\n").unwrap();
    assert_eq!(run(&["run", "--config", "bad.toml"], tmp.path()).status.code(), Some(2));
    std::fs::write(tmp.path().join("x.toml"), "[corpus]\npath = \"missing.tsv\"\n").unwrap();
    assert_eq!(run(&["run", "--config", "x.toml"], tmp.path()).status.code(), Some(2));
    std::fs::write(tmp.path().join("c.tsv"), "fine\t1\nbroken\t7\n").unwrap();
    let o = run(&["preprocess", "--input", "c.tsv"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2:"));
    assert_eq!(run(&["no-such-command"], tmp.path()).status.code(), Some(2));
}

#[test]
fn train_then_reuse_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let cfg = cfg.to_str().unwrap();

    let o = run(&["train-baseline", "--config", cfg], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let base_dir = tmp.path().join(stdout(&o).trim());
    let base_ck = base_dir.join("checkpoint_baseline.json");
    assert!(base_ck.exists() && base_dir.join("metrics_baseline.csv").exists());
    let echoed = std::fs::read_to_string(base_dir.join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 5"));

    let o = run(&["eval", "--config", cfg, "--checkpoint", base_ck.to_str().unwrap()], tmp.path());
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(v["metrics"]["macro_f1"].as_f64().unwrap() >= 0.9);

    let o = run(&["calibrate", "--config", cfg, "--checkpoint", base_ck.to_str().unwrap()], tmp.path());
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["thresholds"].as_array().unwrap().len(), 3);

    let o = run(
        &["train-seq", "--config", cfg, "--baseline", base_ck.to_str().unwrap()],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let seq_dir = tmp.path().join(stdout(&o).trim());
    assert_ne!(seq_dir, base_dir);
    let seq_ck = seq_dir.join("checkpoint_seq.json");
    assert!(seq_ck.exists());
    assert!(!seq_dir.join("checkpoint_baseline.json").exists());

    let o = run(
        &[
            "explain",
            "--config",
            cfg,
            "--seq",
            seq_ck.to_str().unwrap(),
            "--baseline",
            base_ck.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(o.status.success());
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!lines.is_empty());
    assert!(lines[0]["seq"]["chunks"].is_array());
    assert!(lines[0]["baseline"]["comp"].is_array());

    let o = run(
        &["intervene", "--config", cfg, "--checkpoint", seq_ck.to_str().unwrap(), "--operator", "gate-zero", "--operator", "u-perturb"],
        tmp.path(),
    );
    assert!(o.status.success());
    let csv = stdout(&o);
    assert!(csv.starts_with("operator,dc,pr,mvr,n_cases"));
    assert_eq!(csv.lines().count(), 3);

    let o = run(
        &["intervene", "--config", cfg, "--checkpoint", seq_ck.to_str().unwrap(), "--deltas", "1,-1"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(2), "decreasing deltas are rejected");

    let o = run(&["eval", "--config", cfg, "--checkpoint", "nope.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_is_append_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[stages]\nseq = false\n");
    let cfg = cfg.to_str().unwrap();
    let a = run(&["run", "--config", cfg], tmp.path());
    let b = run(&["run", "--config", cfg], tmp.path());
    assert!(a.status.success() && b.status.success());
    let (da, db) = (tmp.path().join(stdout(&a).trim()), tmp.path().join(stdout(&b).trim()));
    assert_ne!(da, db);
    let name = |p: &Path| p.file_name().unwrap().to_string_lossy().into_owned();
    assert!(name(&da).ends_with("-1") && name(&db).ends_with("-2"));
    for f in ["report.json", "summary.csv", "explanations.jsonl", "rules.jsonl", "lexicon.jsonl"] {
        assert!(da.join(f).exists(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(da.join("report.json")).unwrap()).unwrap();
    let hash = report["content_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(name(&da).contains(&hash[..8]));
}
