//! Command-line behaviour: exit codes, config handling and small end-to-end runs.

use std::path::Path;

use ctxbias::cli::run;
use serde_json::Value;

fn ctx(args: &[&str]) -> i32 {
    run(std::iter::once("ctxbias").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_data(dir: &Path) {
    let out = dir.join("data");
    let code = ctx(&[
        "synth-data", "--out", s(&out), "--n-words", "300", "--n-lm-text", "1500", "--n-train", "60",
        "--n-dev", "10", "--n-test", "12", "--top-k", "40", "--vocab-size", "100", "--d-emb", "8",
        "--d-dec", "8",
    ]);
    assert_eq!(code, 0);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(ctx(&["decode", "--no-such-flag"]), 2);
    assert_eq!(ctx(&["frobnicate"]), 2);
    assert_eq!(ctx(&["--help"]), 0);
    assert_eq!(ctx(&["--version"]), 0);
}

#[test]
fn config_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(ctx(&["decode", "--config", s(&missing), "--out", "x"]), 2);

    small_data(dir.path());
    let cfg = dir.path().join("data/config.toml");
    let text = std::fs::read_to_string(&cfg).unwrap();
    let bad = dir.path().join("data/bad.toml");
    std::fs::write(&bad, text.replace("[decode]", "[decode]\nbeem = 3")).unwrap();
    assert_eq!(ctx(&["decode", "--config", s(&bad), "--out", s(&dir.path().join("o"))]), 2);
    std::fs::write(&bad, text.replace("test.jsonl", "absent.jsonl")).unwrap();
    assert_eq!(ctx(&["decode", "--config", s(&bad), "--out", s(&dir.path().join("o"))]), 2);
    let out = dir.path().join("o.jsonl");
    assert_eq!(ctx(&["decode", "--config", s(&cfg), "--beam", "2", "--nbest", "3", "--out", s(&out)]), 2);
    assert_eq!(ctx(&["decode", "--config", s(&cfg), "--checkpoint", "x.json", "--out", s(&out)]), 2);
}

#[test]
fn scoring_references_against_themselves_gives_zero() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path());
    let test = dir.path().join("data/test.jsonl");
    let report = dir.path().join("score.json");
    assert_eq!(ctx(&["score", "--ref", s(&test), "--hyp", s(&test), "--out", s(&report)]), 0);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["payload"]["wer"], 0.0);
    assert_eq!(v["header"]["command"], "score");
}

#[test]
fn small_pipeline_produces_headed_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path());
    let d = dir.path().join("data");
    let p = |n: &str| d.join(n);
    let cfg = p("config.toml");
    assert_eq!(ctx(&["extract-error-list", "--config", s(&cfg), "--out", s(&p("err.txt"))]), 0);
    assert_eq!(
        ctx(&["train", "--config", s(&cfg), "--list", s(&p("rare_words.txt")), "--epochs", "2", "--distractors", "20", "--out", s(&p("ck.json"))]),
        0
    );
    assert_eq!(ctx(&["build-lists", "--config", s(&cfg), "--distractors", "30", "--out", s(&p("lists.jsonl"))]), 0);
    assert_eq!(
        ctx(&["decode", "--config", s(&cfg), "--checkpoint", s(&p("ck.json")), "--lists", s(&p("lists.jsonl")), "--trace", "--workers", "2", "--out", s(&p("nb.jsonl"))]),
        0
    );
    let nb = std::fs::read_to_string(p("nb.jsonl")).unwrap();
    let mut lines = nb.lines();
    let header: Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["header"]["command"], "decode");
    assert_eq!(header["header"]["config_hash"].as_str().unwrap().len(), 64);
    let first: Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    let h0 = &first["hyps"][0];
    assert_eq!(h0["gen_trace"].as_array().unwrap().len(), h0["pieces"].as_array().unwrap().len());

    // worker count does not change the output
    assert_eq!(
        ctx(&["decode", "--config", s(&cfg), "--checkpoint", s(&p("ck.json")), "--lists", s(&p("lists.jsonl")), "--trace", "--out", s(&p("nb1.jsonl"))]),
        0
    );
    assert_eq!(nb, std::fs::read_to_string(p("nb1.jsonl")).unwrap());

    let ck: Value = serde_json::from_str(&std::fs::read_to_string(p("ck.json")).unwrap()).unwrap();
    assert_eq!(ck["header"]["command"], "train");
    assert!(std::fs::read_to_string(p("err.txt")).unwrap().starts_with("#ctxbias {"));

    let gc = dir.path().join("gc.json");
    assert_eq!(ctx(&["gradcheck", "--configs", "3", "--out", s(&gc)]), 0);
}
