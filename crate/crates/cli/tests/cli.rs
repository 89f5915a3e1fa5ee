use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &["--tasks", "4", "--n-per-task", "80", "--hidden-dim", "8", "--steps", "10"];

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_siftmask"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().chain(SMALL).copied().collect()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn happy_path_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for args in [
        with_small(&["gen-data", "--out", "o"]),
        with_small(&["train", "--out", "o"]),
        vec!["unlearn", "--out", "o", "--id", "1", "--audit"],
        vec!["verify", "--out", "o"],
        vec!["eval", "--out", "o"],
        vec!["merge", "--out", "o"],
        vec!["report", "--out", "o"],
    ] {
        let o = run(d, &args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    }
    for f in ["data.jsonl", "config.json", "checkpoint.sftm", "ledger.csv", "eval.csv", "summary.json", "merged_model.json"] {
        assert!(d.join("o").join(f).exists(), "{f} missing");
    }
    let log = std::fs::read_to_string(d.join("o/exactness.jsonl")).unwrap();
    let report: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(report["task"], 1);
    assert_eq!(report["replay_matches"], true);
    assert_eq!(report["state_matches_oracle"], true);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("o/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["retained"], 3);
    assert_eq!(summary["unlearned"], 1);
}

#[test]
fn unknown_id_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(d, &with_small(&["train", "--out", "o"])).status.success());
    let o = run(d, &["unlearn", "--out", "o", "--id", "42"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("42"), "{}", stderr(&o));
}

#[test]
fn repeated_unlearn_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(d, &with_small(&["train", "--out", "o"])).status.success());
    assert!(run(d, &["unlearn", "--out", "o", "--id", "0"]).status.success());
    let o = run(d, &["unlearn", "--out", "o", "--id", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ids_file_deletes_every_listed_task() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(d, &with_small(&["train", "--out", "o", "--method", "ft-merge"])).status.success());
    std::fs::write(d.join("ids.txt"), "0, 3\n").unwrap();
    let o = run(d, &["unlearn", "--out", "o", "--ids-file", "ids.txt"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(d.join("o/exactness.jsonl")).unwrap().lines().count(), 2);
    assert!(run(d, &["verify", "--out", "o"]).status.success());
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["bogus"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["train", "--steps", "many"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["unlearn"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["verify", "--out", "nothing"]).status.code(), Some(2));
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(d, &with_small(&["train", "--out", "o"])).status.success());
    let path = d.join("o/checkpoint.sftm");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&path, bytes).unwrap();
    assert_eq!(run(d, &["verify", "--out", "o"]).status.code(), Some(2));
}

#[test]
fn simulate_reports_closed_form_costs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["report", "--simulate", "--tasks", "500", "--out", "o"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let row = |name: &str| text.lines().find(|l| l.starts_with(name)).unwrap().to_string();
    assert!(row("central").split_whitespace().nth(1) == Some("124750"), "{text}");
    assert!(row("sift_masks").split_whitespace().nth(1) == Some("499"), "{text}");
    assert!(text.contains("250.00"));
    assert!(dir.path().join("o/projection.csv").exists());
}

#[test]
fn simulate_with_clusters() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["report", "--simulate", "--tasks", "10", "--clusters", "2", "--out", "o"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let central = text.lines().find(|l| l.starts_with("central")).unwrap();
    // Two clusters of five: 2 * (4 + 3 + 2 + 1).
    assert_eq!(central.split_whitespace().nth(1), Some("20"));
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(d, &with_small(&["train", "--out", "a", "--threads", "1"])).status.success());
    assert!(run(d, &with_small(&["train", "--out", "b", "--threads", "3"])).status.success());
    for out in ["a", "b"] {
        assert!(run(d, &["merge", "--out", out]).status.success());
    }
    let a = std::fs::read(d.join("a/merged_model.json")).unwrap();
    let b = std::fs::read(d.join("b/merged_model.json")).unwrap();
    assert_eq!(a, b);
    let ea = std::fs::read_to_string(d.join("a/ledger.csv")).unwrap();
    let eb = std::fs::read_to_string(d.join("b/ledger.csv")).unwrap();
    assert_eq!(ea, eb);
}

#[test]
fn config_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(d, &with_small(&["gen-data", "--out", "o", "--method", "ties", "--density", "0.3"])).status.success());
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("o/config.json")).unwrap()).unwrap();
    assert_eq!(cfg["steps"], 10);
    let o = run(d, &["train", "--config", "o/config.json", "--out", "p"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("ties"));
}

#[test]
fn data_file_source_trains() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(d, &with_small(&["gen-data", "--out", "o"])).status.success());
    let o = run(d, &["train", "--out", "p", "--data-file", "o/data.jsonl", "--hidden-dim", "8", "--steps", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("merged 4 tasks"));
}
