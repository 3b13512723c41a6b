use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use debias::manifest::{sha256_file, Manifest};
use debias::tensor::{self, Tensor};

const SMALL: &[&str] = &["synth_samples=300", "floor=5", "synth_alpha=0.5", "epochs=4", "window=3"];

fn debias(args: &[&str], sets: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_debias"))
        .args(args)
        .args(sets.iter().flat_map(|kv| ["--set", kv]))
        .env_remove("DEBIAS_OUT_DIR")
        .output()
        .unwrap()
}

fn ok(args: &[&str], sets: &[&str]) {
    let out = debias(args, sets);
    assert!(out.status.success(), "debias {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn finals(dir: &Path) -> BTreeMap<&'static str, String> {
    ["corpus_transferred.jsonl", "audit.jsonl", "metrics.json"]
        .into_iter()
        .map(|f| (f, sha256_file(&dir.join(f)).unwrap()))
        .collect()
}

#[test]
fn pipeline_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&["pipeline", "-o", d], SMALL);
    for stage in ["synth", "infer-targets", "train", "filter", "transfer", "evaluate"] {
        let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.path().join(format!("manifest.{stage}.json"))).unwrap()).unwrap();
        assert_eq!(m.stage, stage);
        for fd in m.outputs.values() {
            assert_eq!(sha256_file(&dir.path().join(&fd.file)).unwrap(), fd.sha256);
        }
    }
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["output"]["mR@20"].is_number());
    assert!(metrics["recovery"]["recovered_rate"].is_number());
}

#[test]
fn deleted_intermediates_are_reproduced() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&["pipeline", "-o", d], SMALL);
    let want = finals(dir.path());

    // each intermediate with the first stage that rebuilds it
    let cases = [
        ("targets.jsonl", "infer-targets"),
        ("traces.ptns", "train"),
        ("model_W.ptns", "train"),
        ("filtration.jsonl", "filter"),
        ("corpus_transferred.jsonl", "transfer"),
    ];
    let order = ["infer-targets", "train", "filter", "transfer", "evaluate"];
    for (file, from) in cases {
        fs::remove_file(dir.path().join(file)).unwrap();
        let start = order.iter().position(|s| *s == from).unwrap();
        for stage in &order[start..] {
            ok(&[stage, "-o", d], SMALL);
        }
        assert_eq!(finals(dir.path()), want, "after deleting {file}");
    }
}

#[test]
fn mismatched_probs_rows_name_the_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&["synth", "-o", d], SMALL);
    let p = dir.path().join("probs.ptns");
    let t = tensor::read(&p).unwrap();
    let q = t.dims[1];
    let short = Tensor::new(vec![299, q], t.data[..299 * q].to_vec()).unwrap();
    tensor::write(&p, &short).unwrap();
    let out = debias(&["infer-targets", "-o", d], SMALL);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(err.contains("300") && err.contains("299"), "{err}");
}

#[test]
fn missing_input_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = debias(&["train", "-o", dir.path().to_str().unwrap()], &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing input"));
}

#[test]
fn bad_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = debias(&["synth", "-o", d], &["no_such_key=1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
    let out = debias(&["synth", "-o", d], &["mu=-1"]);
    assert!(!out.status.success());
}

#[test]
fn config_file_and_out_dir_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let from_file = dir.path().join("file-out");
    let from_env = dir.path().join("env-out");
    let from_flag = dir.path().join("flag-out");
    fs::write(&cfg, format!("out_dir = {:?}\nsynth_samples = 100\n", from_file.to_str().unwrap())).unwrap();
    let c = cfg.to_str().unwrap();

    ok(&["synth", "-c", c], &[]);
    assert!(from_file.join("corpus.jsonl").is_file());
    assert_eq!(fs::read_to_string(from_file.join("corpus.jsonl")).unwrap().lines().count(), 100);

    let status = Command::new(env!("CARGO_BIN_EXE_debias"))
        .args(["synth", "-c", c])
        .env("DEBIAS_OUT_DIR", &from_env)
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(from_env.join("corpus.jsonl").is_file());

    let status = Command::new(env!("CARGO_BIN_EXE_debias"))
        .args(["synth", "-c", c, "-o", from_flag.to_str().unwrap()])
        .env("DEBIAS_OUT_DIR", &from_env)
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(from_flag.join("corpus.jsonl").is_file());
}

#[test]
fn hash_embeddings_run_on_an_external_corpus() {
    let src = tempfile::tempdir().unwrap();
    ok(&["synth", "-o", src.path().to_str().unwrap()], SMALL);
    let dir = tempfile::tempdir().unwrap();
    let p = |f: &str| src.path().join(f).to_str().unwrap().to_string();
    let sets = [
        format!("corpus={}", p("corpus.jsonl")),
        format!("vocab={}", p("vocab.json")),
        format!("probs={}", p("probs.ptns")),
        format!("truth={}", p("truth.json")),
        "embeddings=hash".into(),
        "hash_dim=32".into(),
        "rep_dim=8".into(),
    ];
    let mut all: Vec<&str> = SMALL.to_vec();
    all.extend(sets.iter().map(String::as_str));
    ok(&["pipeline", "-o", dir.path().to_str().unwrap()], &all);
    assert!(!dir.path().join("manifest.synth.json").exists());
    assert!(dir.path().join("metrics.json").is_file());
}
