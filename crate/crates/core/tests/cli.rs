// End-to-end checks of the `ecoevo` binary: help text, staged runs, error
// reporting, and determinism across reruns and thread counts.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ecoevo"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn ecoevo");
    assert!(
        out.status.success(),
        "ecoevo {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout_of(args: &[&str]) -> String {
    String::from_utf8(run_ok(args).stdout).unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn help_documents_the_tuning_flags() {
    let help = stdout_of(&["pipeline", "--help"]);
    for flag in [
        "--synth",
        "--seed",
        "--trees",
        "--alpha",
        "--beta",
        "--period-days",
        "--min-community-size",
        "--resolution",
        "--test-fraction",
        "--dependence-feature",
    ] {
        assert!(help.contains(flag), "pipeline --help missing {flag}");
    }

    let detect = stdout_of(&["detect", "--help"]);
    assert!(detect.contains("--min-community-size"));
    assert!(detect.contains("default: 4"));
    let track = stdout_of(&["track", "--help"]);
    assert!(track.contains("default: 0.5"));
    let snapshot = stdout_of(&["snapshot", "--help"]);
    assert!(snapshot.contains("--period-days"));
    assert!(snapshot.contains("default: 30"));
    let train = stdout_of(&["train", "--help"]);
    assert!(train.contains("default: 100"));
    assert!(train.contains("balanced"));
}

#[test]
fn synth_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = stdout_of(&["pipeline", "--run", run.to_str().unwrap(), "--synth"]);
    assert!(out.contains("macro-F1"), "summary line missing from:\n{out}");

    for rel in [
        "manifest.json",
        "nodes.csv",
        "events.csv",
        "mechanisms.cfg",
        "schedule.json",
        "snapshots/manifest.json",
        "snapshots/snapshot_0000.csv",
        "communities/partition_0000.json",
        "events.json",
        "event_distribution.csv",
        "features/community_features.csv",
        "features/features.csv",
        "features/sequence_summary.json",
        "model/split.json",
        "model/model.json",
        "model/baseline_tree.json",
        "model/baseline.json",
        "model/metrics.csv",
        "model/confusion.csv",
        "explanations/explanations.json",
        "explanations/importance_heatmap.csv",
        "explanations/dependence.csv",
        "reports/ecosystem_size.csv",
        "reports/event_distribution.csv",
        "reports/importance_heatmap.csv",
        "reports/dependence.csv",
        "reports/decision_report.json",
    ] {
        assert!(run.join(rel).is_file(), "missing artifact {rel}");
    }

    let metrics = String::from_utf8(read(&run.join("model/metrics.csv"))).unwrap();
    assert!(metrics.lines().count() > 1, "metrics.csv has no data rows");
    assert!(metrics.starts_with("model,scope,metric,value"));
}

#[test]
fn stages_refuse_to_run_out_of_order() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("empty");
    std::fs::create_dir(&run).unwrap();
    let out = bin().args(["detect", "--run", run.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("snapshots/manifest.json") && stderr.contains("snapshot"),
        "unhelpful missing-input error: {stderr}"
    );
}

#[test]
fn retraining_with_the_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    run_ok(&["synth", "--out", run_s]);
    // the default script spans ten 30-day windows from 2020-01-01
    run_ok(&[
        "snapshot",
        "--run",
        run_s,
        "--nodes",
        run.join("nodes.csv").to_str().unwrap(),
        "--events",
        run.join("events.csv").to_str().unwrap(),
        "--mechanisms",
        run.join("mechanisms.cfg").to_str().unwrap(),
        "--start",
        "2020-01-01T00:00:00Z",
        "--end",
        "2020-09-27T00:00:00Z",
    ]);
    run_ok(&["detect", "--run", run_s, "--seed", "1"]);
    run_ok(&["track", "--run", run_s]);
    run_ok(&["featurize", "--run", run_s]);

    run_ok(&["train", "--run", run_s, "--seed", "7"]);
    let first = read(&run.join("model/model.json"));
    run_ok(&["train", "--run", run_s, "--seed", "7"]);
    assert_eq!(first, read(&run.join("model/model.json")));
}

#[test]
fn thread_count_does_not_change_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&["pipeline", "--run", a.to_str().unwrap(), "--synth"]);
    run_ok(&["--threads", "1", "pipeline", "--run", b.to_str().unwrap(), "--synth"]);
    for rel in [
        "model/model.json",
        "model/metrics.csv",
        "explanations/explanations.json",
        "explanations/importance_heatmap.csv",
        "reports/decision_report.json",
        "manifest.json",
    ] {
        assert_eq!(read(&a.join(rel)), read(&b.join(rel)), "{rel} differs across thread counts");
    }
}

#[test]
fn evaluate_and_report_print_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();
    run_ok(&["pipeline", "--run", run_s, "--synth"]);

    let eval = stdout_of(&["evaluate", "--run", run_s]);
    assert!(eval.contains("forest"), "evaluate summary missing model lines:\n{eval}");
    let report = stdout_of(&["report", "--run", run_s]);
    assert!(report.contains("reports"), "report summary missing path:\n{report}");
}
