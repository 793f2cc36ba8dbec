use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn aucner(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aucner")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const CONFIG: &str = r#"
name = "small"
methods = ["CE", "AUC-2T"]
sizes = [20]
partitions = 2
bootstrap_resamples = 100

[corpus.synthetic]
train_sentences = 300
dev_sentences = 40
test_sentences = 60
seed = 5
entity_free_rate = 0.35
cue_rate = 0.8

[train]
epochs = 1
"#;

#[test]
fn help_lists_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&aucner(&["--help"], dir.path()));
    for cmd in ["prepare", "sample", "train", "sweep", "report", "verify"] {
        assert!(out.contains(cmd), "{cmd} missing from:\n{out}");
    }
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = aucner(&["verify"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 5);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), CONFIG).unwrap();
    let o = aucner(
        &["sweep", "--config", "small.toml", "--size", "30", "--partitions", "3", "--out", "res", "--jobs", "2"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("res/aggregates/small.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("30") && r.ends_with(",3")), "{csv}");
    assert_eq!(fs::read_to_string(dir.path().join("res/runs/small.jsonl")).unwrap().lines().count(), 6);

    let o = aucner(&["report", "res/aggregates/small.jsonl", "--format", "size-curve"], dir.path());
    assert!(o.status.success());
    let curve = fs::read_to_string(dir.path().join("res/aggregates/small.size-curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("method,x,mean,lo95,hi95"));
    assert_eq!(curve.lines().count(), 3);
}

#[test]
fn train_appends_one_record_per_call() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), CONFIG).unwrap();
    for _ in 0..2 {
        let o = aucner(&["train", "--config", "small.toml", "--method", "CE-2T", "--size", "20"], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("test precision"));
    }
    let log = fs::read_to_string(dir.path().join("out/runs/train.jsonl")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 2);
    let strip = |l: &str| {
        let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
        v["record"]["wall_clock_secs"] = 0.into();
        v
    };
    assert_eq!(strip(lines[0]), strip(lines[1]));
}

#[test]
fn sample_writes_a_manifest_line_per_partition() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), CONFIG).unwrap();
    let o = aucner(&["sample", "--config", "small.toml", "--size", "40", "--entity-pct", "5,10"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(dir.path().join("out/manifests/small.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 4);
}

#[test]
fn bad_method_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = aucner(&["train", "--method", "SVM", "--size", "20"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("SVM"));
}

#[test]
fn prepare_reports_every_split() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), CONFIG).unwrap();
    let o = aucner(&["prepare", "--config", "small.toml"], dir.path());
    assert!(o.status.success());
    let out = stdout(&o);
    for split in ["train", "dev", "test"] {
        assert!(out.contains(split));
    }
    assert!(dir.path().join("out/vocab.json").is_file());
    assert!(dir.path().join("out/stats.json").is_file());
}
