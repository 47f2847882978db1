use std::path::Path;
use std::process::{Command, Output};

use topics_core::corpus::read_uci_bow;
use topics_core::snapshot::Snapshot;

fn run(bin: &str, args: &[&str]) -> Output {
    Command::new(bin).args(args).output().unwrap()
}

fn synth(dir: &Path) -> (String, String) {
    let out = dir.to_str().unwrap();
    let o = run(env!("CARGO_BIN_EXE_topics-synth"), &["--d", "120", "--w", "40", "--k", "3", "--seed", "5", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (dir.join("docword.txt").display().to_string(), dir.join("vocab.txt").display().to_string())
}

fn train_with(algo: &str, docword: &str, vocab: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "--algo", algo, "--docword", docword, "--vocab", vocab, "--k", "3", "--n-test", "20", "--minibatch", "10",
        "--epochs", "2", "--checkpoint-minibatches", "4", "--seed", "9", "--out", out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(env!("CARGO_BIN_EXE_topics-train"), &args)
}

fn train(algo: &str, docword: &str, vocab: &str, out: &Path) -> Output {
    // MAP-EM needs priors of at least one
    let extra: &[&str] = if algo == "map" { &["--alpha", "1.1", "--eta", "1.01"] } else { &[] };
    train_with(algo, docword, vocab, out, extra)
}

#[test]
fn synth_output_parses() {
    let dir = tempfile::tempdir().unwrap();
    let (docword, vocab) = synth(dir.path());
    let parsed = read_uci_bow(Path::new(&docword), Path::new(&vocab)).unwrap();
    assert_eq!(parsed.corpus.vocab_size(), 40);
    assert_eq!(parsed.corpus.num_docs() + parsed.dropped_empty_docs, 120);
    assert!(dir.path().join("truth.txt").exists());
}

#[test]
fn unknown_algorithm_exits_with_usage_code() {
    let o = run(env!("CARGO_BIN_EXE_topics-train"), &["--algo", "lda", "--docword", "x", "--vocab", "y", "--out", "z"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_corpus_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = train("scvb0", "/nonexistent/docword.txt", "/nonexistent/vocab.txt", dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_writes_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (docword, vocab) = synth(dir.path());
    for algo in ["scvb0", "cvb0", "map", "svb"] {
        let a = dir.path().join(format!("{algo}-a"));
        let b = dir.path().join(format!("{algo}-b"));
        for out in [&a, &b] {
            let o = train(algo, &docword, &vocab, out);
            assert!(o.status.success(), "{algo}: {}", String::from_utf8_lossy(&o.stderr));
        }
        for f in ["model.snap", "model.snap.json", "metrics.jsonl", "report.json"] {
            assert!(a.join(f).exists(), "{algo} missing {f}");
        }
        let snap = Snapshot::read(&a.join("model.snap")).unwrap();
        assert_eq!((snap.algorithm.name(), snap.num_topics(), snap.vocab_size()), (algo, 3, 40));
        let metrics = std::fs::read_to_string(a.join("metrics.jsonl")).unwrap();
        assert!(metrics.lines().count() >= 2, "{algo}: {metrics}");
        for line in metrics.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v["heldout_ll_per_token"].as_f64().unwrap() < 0.0);
        }
        assert_eq!(std::fs::read(a.join("model.snap")).unwrap(), std::fs::read(b.join("model.snap")).unwrap(), "{algo}");
    }
    assert!(dir.path().join("map-a/bound.csv").exists());
    let o = train_with("map", &docword, &vocab, &dir.path().join("map-bad"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn topwords_prints_each_topic_and_rejects_large_n() {
    let dir = tempfile::tempdir().unwrap();
    let (docword, vocab) = synth(dir.path());
    let out = dir.path().join("run");
    assert!(train("scvb0", &docword, &vocab, &out).status.success());
    let snap = out.join("model.snap");
    let bin = env!("CARGO_BIN_EXE_topics-topwords");
    let o = run(bin, &["--snapshot", snap.to_str().unwrap(), "--vocab", &vocab, "--n", "4"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().all(|l| l.split_whitespace().count() == 2 + 4));
    let o = run(bin, &["--snapshot", snap.to_str().unwrap(), "--vocab", &vocab, "--n", "41"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_compares_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (docword, vocab) = synth(dir.path());
    let out = dir.path().join("bench");
    let bin = env!("CARGO_BIN_EXE_topics-bench");
    let common = ["--docword", &docword, "--vocab", &vocab, "--k", "3", "--n-test", "20", "--minibatch", "10", "--checkpoint-minibatches", "5"];
    let mut args: Vec<&str> = common.to_vec();
    args.extend(["--run", "scvb0", "--run", "svb:offset=0.5,label=svb-off", "--out", out.to_str().unwrap()]);
    let o = run(bin, &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("bench.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("run,algorithm"), "{header}");
    assert!(csv.contains("svb-off"));

    let mut one: Vec<&str> = common.to_vec();
    one.extend(["--run", "scvb0", "--out", out.to_str().unwrap()]);
    assert_eq!(run(bin, &one).status.code(), Some(2));
}
