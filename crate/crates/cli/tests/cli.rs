use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn asttf(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asttf"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const TINY: &str = r#"{"d_model": 16, "heads_per_branch": 2, "enc_layers": 1, "dec_layers": 1, "d_ff": 32, "steps": 30, "min_freq": 1}"#;

#[test]
fn gen_is_stable_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    ok(&asttf(&["gen", "--n", "1000", "--seed", "42", "--out", "a.jsonl"], dir.path()));
    ok(&asttf(&["gen", "--n", "1000", "--seed", "42", "--out", "b.jsonl"], dir.path()));
    let a = fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.jsonl")).unwrap());
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 1000);
    let other = ok(&asttf(&["gen", "--n", "1000", "--seed", "43"], dir.path()));
    assert_ne!(other.as_bytes(), &a[..]);
}

#[test]
fn unknown_flag_is_a_usage_error_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = asttf(&["gen", "--n", "3", "--out", "x.jsonl", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    assert!(!out.stderr.is_empty());
    assert!(!dir.path().join("x.jsonl").exists());
    assert_eq!(asttf(&["frobnicate"], dir.path()).status.code(), Some(1));
}

#[test]
fn bad_data_exits_with_two_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let good = r#"{"id":"a","source":"void f() { }","summary":"does nothing"}"#;
    let bad = r#"{"id":"b","source":"void g( { }","summary":"broken"}"#;
    fs::write(dir.path().join("c.jsonl"), format!("{good}\n{bad}\n")).unwrap();
    let out = asttf(&["linearize", "--corpus", "c.jsonl", "--out", "l.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("l.jsonl").exists());
    assert!(String::from_utf8_lossy(&out.stderr).contains("example b"));

    let out = asttf(&["train", "--corpus", "c.jsonl", "--out", "ck"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("ck").exists());

    fs::write(dir.path().join("cfg.json"), r#"{"d_model": 10, "heads_per_branch": 3}"#).unwrap();
    fs::write(dir.path().join("ok.jsonl"), format!("{good}\n")).unwrap();
    let out = asttf(&["train", "--corpus", "ok.jsonl", "--config", "cfg.json", "--out", "ck"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("ck").exists());
}

#[test]
fn parse_linearize_and_relations_outputs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("f.ml"), "void f() { }").unwrap();
    let ast: Value = serde_json::from_str(&ok(&asttf(&["parse", "--input", "f.ml"], dir.path()))).unwrap();
    assert_eq!(ast["children"].as_array().unwrap().len(), 2);

    fs::write(
        dir.path().join("c.jsonl"),
        "{\"id\":\"v\",\"source\":\"void f() { }\",\"summary\":\"does nothing\"}\n",
    )
    .unwrap();
    let converted = ok(&asttf(&["parse", "--corpus", "c.jsonl"], dir.path()));
    let line: Value = serde_json::from_str(converted.trim()).unwrap();
    assert!(line.get("source").is_none());
    assert_eq!(line["ast"], ast);

    let lin: Value = serde_json::from_str(ok(&asttf(&["linearize", "--corpus", "c.jsonl", "--method", "sbt"], dir.path())).trim()).unwrap();
    let keys: Vec<&str> = lin.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["method", "tokens", "node_ids"]);
    assert_eq!(lin["method"], "sbt");
    assert_eq!(lin["tokens"].as_array().unwrap().len(), 12);

    let rel: Value = serde_json::from_str(ok(&asttf(&["relations", "--corpus", "c.jsonl"], dir.path())).trim()).unwrap();
    assert_eq!(rel["anc"].as_array().unwrap().len(), 7);
    assert_eq!(rel["sib"][2], serde_json::json!([1, 2, 1]));

    let stats: Value = serde_json::from_str(ok(&asttf(&["relations", "--corpus", "c.jsonl", "--stats", "--k-anc", "0", "--k-sib", "0"], dir.path())).trim()).unwrap();
    let keys: Vec<&str> = stats.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["n", "allowed_anc", "allowed_sib", "allowed_union", "reduction"]);
    assert_eq!(stats["allowed_union"], 3);
}

#[test]
fn train_eval_summarize_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.json"), TINY).unwrap();
    ok(&asttf(&["gen", "--n", "16", "--out", "corpus.jsonl"], d));
    let train = |out: &str| ok(&asttf(&["train", "--config", "c.json", "--corpus", "corpus.jsonl", "--out", out, "--log-every", "0"], d));
    let report: Value = serde_json::from_str(&train("ck1")).unwrap();
    assert_eq!(report["steps"], 30);
    train("ck2");
    for f in ["config.json", "manifest.json", "params.bin", "run.json", "code_vocab.json", "summary_vocab.json"] {
        assert_eq!(fs::read(d.join("ck1").join(f)).unwrap(), fs::read(d.join("ck2").join(f)).unwrap(), "{f}");
    }

    let eval = |ck: &str| ok(&asttf(&["eval", "--checkpoint", ck, "--corpus", "corpus.jsonl"], d));
    let a = eval("ck1");
    assert_eq!(a, eval("ck2"));
    let report: Value = serde_json::from_str(&a).unwrap();
    let keys: Vec<&str> = report.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["bleu", "meteor_exact", "rouge_l", "n_pairs", "exact_match", "loss"]);
    assert_eq!(report["n_pairs"], 16);
    let bleu = report["bleu"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&bleu));
    assert_eq!((bleu * 100.0).round() / 100.0, bleu);

    let sums = ok(&asttf(&["summarize", "--checkpoint", "ck1", "--corpus", "corpus.jsonl"], d));
    assert_eq!(sums.lines().count(), 16);
    let first: Value = serde_json::from_str(sums.lines().next().unwrap()).unwrap();
    assert_eq!(first["id"], "ex000000");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("c.json"), TINY).unwrap();
    ok(&asttf(&["gen", "--n", "4", "--out", "corpus.jsonl"], d));
    let out = ok(&asttf(
        &["train", "--config", "c.json", "--corpus", "corpus.jsonl", "--out", "ck", "--steps", "3", "--method", "sbt", "--k-anc", "2", "--seed", "9"],
        d,
    ));
    let report: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["steps"], 3);
    let run: Value = serde_json::from_str(&fs::read_to_string(d.join("ck/run.json")).unwrap()).unwrap();
    assert_eq!(run["method"], "sbt");
    assert_eq!(run["k_anc"], 2);
    assert_eq!(run["seed"], 9);
    assert_eq!(run["d_model"], 16);
}

#[test]
fn stats_gradcheck_and_timing_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&asttf(&["gen", "--n", "5", "--size", "medium", "--out", "m.jsonl"], d));
    let stats: Value = serde_json::from_str(&ok(&asttf(&["stats", "--corpus", "m.jsonl"], d))).unwrap();
    assert_eq!(stats["examples"], 5);
    assert_eq!(stats["sbt_len"]["mean"].as_f64().unwrap(), 4.0 * stats["pot_len"]["mean"].as_f64().unwrap());

    let grad: Value = serde_json::from_str(&ok(&asttf(&["gradcheck", "--seed", "5"], d))).unwrap();
    assert_eq!(grad["pass"], true);

    let timing: Value = serde_json::from_str(&ok(&asttf(&["timing", "--n", "50"], d))).unwrap();
    assert_eq!(timing["rows"].as_array().unwrap().len(), 3);
    assert_eq!(asttf(&["timing", "--n", "0"], d).status.code(), Some(1));
}
