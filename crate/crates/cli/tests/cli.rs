use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ncdsearch_cli::QueryResponse;

fn ncdsearch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncdsearch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Deterministic word soup; `seed` picks the word order.
fn prose(seed: u64, len: usize) -> String {
    const WORDS: [&str; 16] = [
        "river", "stone", "market", "signal", "harvest", "lantern", "copper", "meadow", "engine",
        "treaty", "winter", "orchard", "ledger", "harbor", "canvas", "thunder",
    ];
    let mut x = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    let mut out = String::new();
    while out.len() < len {
        x = x
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        out.push_str(WORDS[(x >> 60) as usize]);
        out.push(if (x >> 20).is_multiple_of(9) {
            '\n'
        } else {
            ' '
        });
    }
    out.truncate(len);
    out
}

/// Twelve 6KB documents; `planted.txt` embeds the returned query.
fn planted_dir(dir: &Path) -> String {
    let query = prose(999, 1500);
    for i in 0..11 {
        fs::write(dir.join(format!("doc{i:02}.txt")), prose(i, 6000)).unwrap();
    }
    let host = format!("{}{}{}", prose(500, 2000), query, prose(501, 2500));
    fs::write(dir.join("planted.txt"), host).unwrap();
    query
}

const FAST: [&str; 2] = ["--replicates", "1000"];

#[test]
fn empty_input_ingests_nothing() {
    let input = tempfile::tempdir().unwrap();
    let corpus = tempfile::tempdir().unwrap();
    let out = ncdsearch(&[
        "ingest",
        input.path().to_str().unwrap(),
        "--corpus",
        corpus.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).starts_with("0 documents ingested"));
}

#[test]
fn ingest_is_idempotent() {
    let input = tempfile::tempdir().unwrap();
    for i in 0..3 {
        fs::write(input.path().join(format!("t{i}.txt")), prose(i, 3000)).unwrap();
    }
    let corpus = tempfile::tempdir().unwrap();
    let args = [
        "ingest",
        input.path().to_str().unwrap(),
        "--corpus",
        corpus.path().to_str().unwrap(),
        "--n-max",
        "4",
    ];
    assert!(ncdsearch(&args).status.success());
    let manifest = corpus.path().join("manifest.json");
    let first = fs::read(&manifest).unwrap();
    let listed: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(listed["documents"].as_array().unwrap().len(), 3);

    let again = ncdsearch(&args);
    assert!(stdout(&again).contains("0 added, 3 unchanged"));
    assert_eq!(fs::read(&manifest).unwrap(), first);
}

#[test]
fn query_finds_planted_document() {
    let input = tempfile::tempdir().unwrap();
    let query = planted_dir(input.path());
    let corpus = tempfile::tempdir().unwrap();
    let c = corpus.path().to_str().unwrap();
    assert!(ncdsearch(&[
        "ingest",
        input.path().to_str().unwrap(),
        "--corpus",
        c,
        "--n-max",
        "8"
    ])
    .status
    .success());

    let mut args = vec!["query", "--corpus", c, "--format", "json", &query];
    args.extend(FAST);
    let out = ncdsearch(&args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let response: QueryResponse = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(response.ranking[0].doc_id, "planted");
    assert!(corpus.path().join("gtable.json").exists());

    let mut args = vec!["query", "--corpus", c, "--alpha", "0", &query];
    args.extend(FAST);
    let out = ncdsearch(&args);
    assert!(out.status.success());
    assert!(stdout(&out).contains("no documents retrieved"));
}

#[test]
fn query_against_empty_corpus_is_empty() {
    let input = tempfile::tempdir().unwrap();
    let corpus = tempfile::tempdir().unwrap();
    let c = corpus.path().to_str().unwrap();
    assert!(
        ncdsearch(&["ingest", input.path().to_str().unwrap(), "--corpus", c])
            .status
            .success()
    );
    let mut args = vec![
        "query",
        "--corpus",
        c,
        "--format",
        "json",
        "anything at all",
    ];
    args.extend(FAST);
    let out = ncdsearch(&args);
    assert!(out.status.success());
    let response: QueryResponse = serde_json::from_slice(&out.stdout).unwrap();
    assert!(response.ranking.is_empty());
}

#[test]
fn exit_codes() {
    // usage errors
    assert_eq!(ncdsearch(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(ncdsearch(&["query"]).status.code(), Some(1));
    let corpus = tempfile::tempdir().unwrap();
    let c = corpus.path().to_str().unwrap();
    assert_eq!(
        ncdsearch(&["query", "--corpus", c, "--alpha", "1.5", "x"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        ncdsearch(&["query", "--corpus", c, ""]).status.code(),
        Some(1)
    );
    // data errors
    let missing = corpus.path().join("missing");
    let out = ncdsearch(&["query", "--corpus", missing.to_str().unwrap(), "text"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no corpus"));
    assert_eq!(
        ncdsearch(&["ingest", missing.to_str().unwrap(), "--corpus", c])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(ncdsearch(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_file_is_read_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("engine.toml");
    fs::write(&cfg, "alpha = 0.0\n").unwrap();
    let input = dir.path().join("in");
    fs::create_dir(&input).unwrap();
    let query = planted_dir(&input);
    let corpus = dir.path().join("corpus");
    let c = corpus.to_str().unwrap();
    assert!(ncdsearch(&[
        "ingest",
        input.to_str().unwrap(),
        "--corpus",
        c,
        "--n-max",
        "8"
    ])
    .status
    .success());

    let base = [
        "--config",
        cfg.to_str().unwrap(),
        "query",
        "--corpus",
        c,
        "--format",
        "json",
    ];
    let mut args = base.to_vec();
    args.extend(FAST);
    args.push(&query);
    let quiet: QueryResponse = serde_json::from_slice(&ncdsearch(&args).stdout).unwrap();
    assert_eq!(quiet.alpha, 0.0);
    assert!(quiet.ranking.is_empty());

    args.extend(["--alpha", "0.05"]);
    let loud: QueryResponse = serde_json::from_slice(&ncdsearch(&args).stdout).unwrap();
    assert_eq!(loud.alpha, 0.05);
    assert_eq!(loud.ranking[0].doc_id, "planted");

    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    assert_eq!(ncdsearch(&args).status.code(), Some(1));
}

#[test]
fn eval_writes_artifacts() {
    let input = tempfile::tempdir().unwrap();
    planted_dir(input.path());
    let out = tempfile::tempdir().unwrap();
    let run = |dest: &Path| {
        ncdsearch(&[
            "eval",
            "--experiment",
            "1",
            "--docs",
            input.path().to_str().unwrap(),
            "--out",
            dest.to_str().unwrap(),
            "--queries",
            "4",
            "--null-seeds",
            "2",
            "--replicates",
            "1000",
        ])
    };
    let first = out.path().join("a");
    let second = out.path().join("b");
    let o = run(&first);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("experiment 1"));
    assert!(run(&second).status.success());
    let csv = fs::read_to_string(first.join("results.csv")).unwrap();
    assert!(
        csv.starts_with("experiment,query_id,alpha,tp,fp,tn,fn,sensitivity,one_minus_specificity")
    );
    assert_eq!(csv, fs::read_to_string(second.join("results.csv")).unwrap());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(first.join("summary.json")).unwrap()).unwrap();
    assert!(summary["mean_auc"].as_f64().is_some());
}
