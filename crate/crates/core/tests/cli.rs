use std::path::Path;
use std::process::{Command, Output};

use streamnav::metrics::MetricsReport;
use streamnav::world::Episode;

fn streamnav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_streamnav"))
        .args(args)
        .output()
        .unwrap()
}

fn out_arg(dir: &Path) -> String {
    dir.to_string_lossy().into_owned()
}

#[test]
fn zero_episodes_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = streamnav(&["bench", "--episodes", "0", "--out", &out_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no outcomes"));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, "{\n  \"task\": \"objectnav\",\n  \"merge\": {\"tua\": 0.9}\n}\n").unwrap();
    let o = streamnav(&["bench", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("tua") && err.contains("line 3"), "{err}");
    for bad in [
        vec!["bench", "--latency", "inference=fast"],
        vec!["bench", "--task", "dance"],
        vec!["bench", "--set", "merge.tau=3"],
        vec!["profile", "--horizon", "0"],
        vec!["bench", "--no-such-flag"],
    ] {
        assert_eq!(streamnav(&bad).status.code(), Some(1), "{bad:?}");
    }
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"task": "vln", "episodes": 50, "profile": {"stream": "orthogonal"}}"#,
    )
    .unwrap();
    let o = streamnav(&[
        "profile",
        "--config",
        cfg.to_str().unwrap(),
        "--horizon",
        "100",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("profile.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with("100,355,6400,"), "{last}");
    assert!(csv.lines().nth(1).unwrap().starts_with("1,64,64,"));
}

#[test]
fn bench_writes_report_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = streamnav(&[
        "bench",
        "--task",
        "objectnav",
        "--episodes",
        "5",
        "--seed",
        "3",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("task"));
    let report: MetricsReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report.episodes, 5);
    let csv = std::fs::read_to_string(dir.path().join("episodes.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("objectnav-3000009,objectnav,3000009,true"));
}

#[test]
fn nonblocking_bench_with_latency_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = streamnav(&[
        "bench",
        "--task",
        "eqa",
        "--episodes",
        "3",
        "--mode",
        "non-blocking",
        "--latency",
        "inference=0,comm=0",
        "--set",
        "perception=true",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: MetricsReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report.tasks[0].sr, 100.0);
}

#[test]
fn dump_episode_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = streamnav(&[
        "dump-episode",
        "--task",
        "follow",
        "--index",
        "2",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ep: Episode = serde_json::from_str(&std::fs::read_to_string(dir.path().join("episode.json")).unwrap()).unwrap();
    assert_eq!(ep.id, "follow-1000005");
    let trace = std::fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    assert!(trace.lines().count() > 4);
    for line in trace.lines() {
        let _: streamnav::executor::TraceRecord = serde_json::from_str(line).unwrap();
    }
    assert_eq!(streamnav(&["dump-episode", "--task", "all"]).status.code(), Some(1));
}

#[test]
fn collect_then_replay_scores_the_recorded_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    let o = streamnav(&["collect", "--task", "all", "--episodes", "3", "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let samples = dir.path().join("samples.jsonl");
    let o = streamnav(&["replay", "--samples", samples.to_str().unwrap(), "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: MetricsReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report.episodes, 12);
    assert!(report.tasks.iter().all(|t| t.sr == 100.0), "{report:?}");
}

#[test]
fn dagger_collect_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = streamnav(&[
        "collect",
        "--task",
        "vln",
        "--episodes",
        "2",
        "--dagger",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert!(o.status.success());
    let (_, samples) = streamnav::dataset::read_samples(&dir.path().join("samples.jsonl")).unwrap();
    assert!(!samples.is_empty());
}
