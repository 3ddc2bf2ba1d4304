use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_rcslab");

fn rcslab(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env("RCSLAB_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = rcslab(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_world(dir: &Path) {
    fs::write(
        dir.join("world.json"),
        r#"{"num_prompts": 40, "candidates_per_prompt": 6, "feature_dim": 5, "conflict_rho": -0.5, "seed": 4}"#,
    )
    .unwrap();
    ok(dir, &["gen-world", "--config", "world.json", "--out", "w"]);
}

/// The whole two-objective pipeline; returns every file it wrote.
fn pipeline(dir: &Path) -> Vec<PathBuf> {
    small_world(dir);
    ok(dir, &["build-dataset", "--world", "w", "--objective", "1", "--seed", "1", "--out", "d1.jsonl"]);
    ok(dir, &["build-dataset", "--world", "w", "--objective", "2", "--seed", "2", "--out", "d2.jsonl"]);
    ok(dir, &["train", "--world", "w", "--dataset", "d1.jsonl", "--objective", "1", "--out", "p1.policy", "--log", "p1.log"]);
    let mut report = vec!["report".to_string(), "--caption".into(), "smoke".into()];
    for s in ["vanilla", "mixed", "rsdpo-w", "rcs"] {
        let data = format!("c_{s}.jsonl");
        let policy = format!("p_{s}.policy");
        let metrics = format!("m_{s}.json");
        ok(
            dir,
            &[
                "curate", "--world", "w", "--dataset", "d1.jsonl", "--dataset", "d2.jsonl", "--strategy", s,
                "--objective", "2", "--policy", "p1.policy", "--seed", "9", "--out", &data,
            ],
        );
        ok(
            dir,
            &[
                "train", "--world", "w", "--dataset", &data, "--objective", "2", "--method", "modpo", "--init",
                "p1.policy", "--out", &policy,
            ],
        );
        ok(dir, &["eval", "--world", "w", "--policy", &policy, "--out", &metrics, "--csv", &format!("m_{s}.csv")]);
        let label = match s {
            "vanilla" => "Vanilla",
            "mixed" => "Mixed",
            "rsdpo-w" => "RSDPO-W",
            _ => "RCS",
        };
        report.extend(["--row".into(), format!("{label}={metrics}")]);
    }
    report.extend(["--out".into(), "table.txt".into(), "--csv".into(), "table.csv".into()]);
    ok(dir, &report.iter().map(String::as_str).collect::<Vec<_>>());
    ok(dir, &["analyze", "--world", "w", "--dataset", "d2.jsonl", "--objective", "2", "--policy", "p1.policy", "--out", "an.csv", "--summary", "an.json"]);
    ok(dir, &["rc-stats", "--world", "w", "--dataset", "c_rcs.jsonl", "--objective", "2", "--out", "rc.json"]);
    ok(dir, &["failure-curve", "--world", "w", "--dataset", "d2.jsonl", "--objective", "2", "--policy", "p1.policy", "--out", "fc.csv"]);
    ok(dir, &["train-seq", "--world", "w", "--stage", "1:dpo:d1.jsonl", "--stage", "2:spo:c_rcs.jsonl", "--out", "seq"]);

    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    files.sort();
    files
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let fa = pipeline(a.path());
    let fb = pipeline(b.path());
    assert_eq!(fa, fb);
    assert!(fa.len() > 30, "{fa:?}");
    for f in &fa {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{}", f.display());
    }

    // Re-running in place overwrites with the same bytes.
    let before = fs::read(a.path().join("table.csv")).unwrap();
    pipeline(a.path());
    assert_eq!(fs::read(a.path().join("table.csv")).unwrap(), before);

    let csv = fs::read_to_string(a.path().join("table.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("Vanilla,") && l.ends_with(",0,0,0")));
    let rc: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.path().join("rc.json")).unwrap()).unwrap();
    assert_eq!(rc["consistent_fraction"], 1.0);
}

#[test]
fn vanilla_curation_copies_the_input() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    small_world(d);
    ok(d, &["build-dataset", "--world", "w", "--objective", "2", "--pairs-per-prompt", "2", "--out", "d2.jsonl"]);
    let stdout = ok(d, &["curate", "--world", "w", "--dataset", "d2.jsonl", "--strategy", "vanilla", "--objective", "2", "--out", "c.jsonl"]);
    assert!(stdout.contains("0 failed"));
    assert_eq!(fs::read(d.join("d2.jsonl")).unwrap(), fs::read(d.join("c.jsonl")).unwrap());
}

#[test]
fn more_samples_fewer_failures() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    small_world(d);
    ok(d, &["build-dataset", "--world", "w", "--objective", "2", "--out", "d2.jsonl"]);
    let failures = |n: &str| {
        let report = format!("r{n}.jsonl");
        ok(d, &["curate", "--world", "w", "--dataset", "d2.jsonl", "--strategy", "rcs", "--objective", "2", "--n", n, "--out", "c.jsonl", "--report", &report]);
        let first = fs::read_to_string(d.join(&report)).unwrap();
        let summary: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
        summary["failure_count"].as_u64().unwrap()
    };
    assert!(failures("16") < failures("1"));
}

#[test]
fn zero_learning_rate_leaves_metrics_unchanged() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    small_world(d);
    ok(d, &["build-dataset", "--world", "w", "--objective", "1", "--out", "d1.jsonl"]);
    ok(d, &["train", "--world", "w", "--dataset", "d1.jsonl", "--objective", "1", "--epochs", "3", "--out", "p.policy"]);
    ok(d, &["train", "--world", "w", "--dataset", "d1.jsonl", "--objective", "1", "--init", "p.policy", "--lr", "0", "--out", "q.policy"]);
    ok(d, &["eval", "--world", "w", "--policy", "p.policy", "--out", "mp.json"]);
    ok(d, &["eval", "--world", "w", "--policy", "q.policy", "--out", "mq.json"]);
    assert_eq!(fs::read(d.join("mp.json")).unwrap(), fs::read(d.join("mq.json")).unwrap());
}

#[test]
fn exit_codes_by_failure_kind() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.json"), r#"{"conflict_rho": 1.5}"#).unwrap();
    let out = rcslab(d, &["gen-world", "--config", "bad.json", "--out", "w"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("conflict_rho"));

    assert_eq!(rcslab(d, &["gen-world", "--config", "missing.json", "--out", "w"]).status.code(), Some(3));
    assert_eq!(rcslab(d, &["curate", "--world", "nowhere", "--dataset", "x", "--strategy", "rcs", "--objective", "2", "--out", "o"]).status.code(), Some(3));
    assert_eq!(rcslab(d, &["curate", "--world", "w", "--dataset", "x", "--strategy", "best", "--objective", "2", "--out", "o"]).status.code(), Some(2));

    small_world(d);
    ok(d, &["build-dataset", "--world", "w", "--objective", "1", "--out", "d1.jsonl"]);
    let out = rcslab(d, &["train", "--world", "w", "--dataset", "d1.jsonl", "--objective", "1", "--lr", "1e9", "--beta", "50", "--epochs", "50", "--out", "p.policy"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    let out = Command::new(BIN)
        .args(["gen-world", "--out", "w2"])
        .current_dir(d)
        .env("RCSLAB_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_rejects_tables_without_vanilla() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    fs::write(d.join("m.json"), r#"{"win_rate_1": 0.5, "expected_reward_1": 0.0, "average_score": 0.5}"#).unwrap();
    assert_eq!(rcslab(d, &["report", "--row", "RCS=m.json"]).status.code(), Some(2));
    let text = ok(d, &["report", "--row", "Vanilla=m.json", "--row", "RCS=m.json"]);
    assert!(text.lines().nth(2).unwrap().starts_with("RCS"));
}
