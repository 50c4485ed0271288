use std::path::Path;
use std::process::{Command, Output};

fn diffurank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffurank"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = diffurank(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path) {
    ok(&[
        "synth",
        "--queries",
        "4",
        "--docs",
        "25",
        "--seed",
        "3",
        "--out-dir",
        p(dir),
        "--train-queries",
        "6",
    ]);
}

#[test]
fn synth_rerank_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let config = data.join("engine.toml");
    let run = tmp.path().join("run.txt");
    let stdout = ok(&[
        "rerank",
        "--config",
        p(&config),
        "--out",
        p(&run),
        "--tag",
        "t1",
    ]);
    assert!(stdout.contains("failed 0"), "{stdout}");

    let text = std::fs::read_to_string(&run).unwrap();
    assert_eq!(text.lines().count(), 100);
    assert!(text
        .lines()
        .all(|l| l.split_whitespace().count() == 6 && l.ends_with(" t1")));
    assert!(tmp.path().join("run.txt.log.jsonl").exists());

    let report = tmp.path().join("per_query.csv");
    let stdout = ok(&[
        "eval",
        "--run",
        p(&run),
        "--qrels",
        p(&data.join("qrels.txt")),
        "--compare",
        p(&data.join("candidates.run")),
        "--ttest",
        "--out",
        p(&report),
    ]);
    assert!(stdout.contains("paired t-test"), "{stdout}");
    let csv = std::fs::read_to_string(&report).unwrap();
    assert_eq!(csv.lines().next(), Some("query_id,metric,value"));
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.lines().last().unwrap().starts_with("all,ndcg@10,"));
}

#[test]
fn recorded_run_replays_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let config = data.join("engine.toml");
    let store = tmp.path().join("fixtures.jsonl");
    let live = tmp.path().join("live.txt");
    let replayed = tmp.path().join("replayed.txt");
    ok(&[
        "rerank",
        "--config",
        p(&config),
        "--strategy",
        "perm_samp",
        "--k",
        "3",
        "--out",
        p(&live),
        "--record",
        p(&store),
    ]);
    ok(&[
        "rerank",
        "--config",
        p(&config),
        "--strategy",
        "perm_samp",
        "--k",
        "3",
        "--provider",
        "replay",
        "--replay",
        p(&store),
        "--out",
        p(&replayed),
    ]);
    assert_eq!(
        std::fs::read(&live).unwrap(),
        std::fs::read(&replayed).unwrap()
    );

    let stdout = ok(&["fixtures", "verify", "--store", p(&store)]);
    assert!(stdout.contains(" 0 invalid"), "{stdout}");
    assert!(!ok(&["fixtures", "list", "--store", p(&store)]).is_empty());
}

#[test]
fn tampered_fixture_fails_verification() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let store = tmp.path().join("fixtures.jsonl");
    ok(&[
        "rerank",
        "--config",
        p(&data.join("engine.toml")),
        "--record",
        p(&store),
        "--out",
        p(&tmp.path().join("r.txt")),
    ]);
    let text = std::fs::read_to_string(&store).unwrap();
    let tampered = text.replacen("\"query_text\":\"", "\"query_text\":\"x", 1);
    assert_ne!(text, tampered);
    std::fs::write(&store, tampered).unwrap();
    let out = diffurank(&["fixtures", "verify", "--store", p(&store)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("key does not match"));
}

#[test]
fn replay_miss_marks_queries_failed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let store = tmp.path().join("empty.jsonl");
    std::fs::write(&store, "").unwrap();
    let run = tmp.path().join("r.txt");
    let out = diffurank(&[
        "rerank",
        "--config",
        p(&data.join("engine.toml")),
        "--provider",
        "replay",
        "--replay",
        p(&store),
        "--out",
        p(&run),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("failed 4"));
    // failed queries keep their first-stage order
    assert_eq!(std::fs::read_to_string(&run).unwrap().lines().count(), 100);
}

#[test]
fn dynamics_from_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let trace = tmp.path().join("trace.jsonl");
    ok(&[
        "rerank",
        "--config",
        p(&data.join("engine.toml")),
        "--strategy",
        "perm_samp",
        "--k",
        "4",
        "--trace",
        p(&trace),
        "--out",
        p(&tmp.path().join("r.txt")),
    ]);
    let out = tmp.path().join("dyn.csv");
    let counts = tmp.path().join("counts");
    ok(&[
        "dynamics",
        "--trace",
        p(&trace),
        "--k",
        "4",
        "--out",
        p(&out),
        "--counts-dir",
        p(&counts),
    ]);
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(counts.join("first_fill_counts.csv").exists());
    assert!(counts.join("eligible_counts.csv").exists());
}

#[test]
fn toy_training_writes_model_and_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    for loss in ["ce", "ranknet", "sft"] {
        let model = tmp.path().join(format!("{loss}.json"));
        let curve = tmp.path().join(format!("{loss}.csv"));
        ok(&[
            "train-toy",
            "--loss",
            loss,
            "--data",
            p(&data.join("train.jsonl")),
            "--epochs",
            "20",
            "--out",
            p(&model),
            "--curve",
            p(&curve),
        ]);
        serde_json::from_str::<serde_json::Value>(&std::fs::read_to_string(&model).unwrap())
            .unwrap();
        assert_eq!(std::fs::read_to_string(&curve).unwrap().lines().count(), 21);
    }
    ok(&[
        "train-toy",
        "--loss",
        "ranknet",
        "--epochs",
        "5",
        "--out",
        p(&tmp.path().join("s.json")),
    ]);
}

#[test]
fn gradcheck_passes() {
    let stdout = ok(&["gradcheck", "--instances", "10"]);
    assert_eq!(stdout.lines().filter(|l| l.ends_with(": ok")).count(), 3);
    let out = diffurank(&[
        "gradcheck",
        "--loss",
        "ce",
        "--instances",
        "5",
        "--tol",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "window_size = 5\nstep_size = 10\n").unwrap();
    assert_eq!(
        diffurank(&["rerank", "--config", p(&bad)]).status.code(),
        Some(2)
    );
    assert_eq!(diffurank(&["rerank"]).status.code(), Some(2));
    assert_eq!(
        diffurank(&["eval", "--run", "missing.txt", "--qrels", "missing.txt"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        diffurank(&["rerank", "--strategy", "nope"]).status.code(),
        Some(2)
    );
}
