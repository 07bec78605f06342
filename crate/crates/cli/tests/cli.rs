use std::fs;
use std::process::Command;

fn handnav(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_handnav")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn run_then_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = out.to_str().unwrap();
    let printed = handnav(&["run", "--task", "grasping", "--trials", "3", "--seed", "5", "--out", o]);
    assert!(printed.contains("successes: 3"), "{printed}");
    for f in ["config.json", "results.ndjson", "trial_000.ndjson", "trial_002.wire", "metrics.csv", "curve.csv", "jumps_hist.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let before = fs::read_to_string(out.join("report.txt")).unwrap();
    fs::remove_file(out.join("report.txt")).unwrap();
    let again = handnav(&["report", "--in", o]);
    assert_eq!(again, before);
}

#[test]
fn frame_stream_replays_into_commands() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("frames.ndjson");
    let f = f.to_str().unwrap();
    handnav(&["frames", "--task", "grasping", "--seed", "1", "--frames", "10", "--file", f]);
    let layout = handnav_core::harness::trial_spec(handnav_core::harness::TaskKind::Grasping, 1, 0);
    let target = layout.target_category.label;
    let lines = handnav(&["replay", "--file", f, "--target", &target]);
    let recs: Vec<serde_json::Value> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(recs.len(), 10);
    assert!(recs.iter().any(|r| !r["command"].is_null()));
}

#[test]
fn transcript_replays_into_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("session.ndjson");
    fs::write(
        &f,
        "{\"frame\":0,\"msg\":{\"type\":\"create_session\",\"task\":\"depth\",\"seed\":1}}\n{\"frame\":2,\"msg\":{\"type\":\"start_trial\"}}\n{\"frame\":20,\"end\":true}\n",
    )
    .unwrap();
    let lines = handnav(&["replay", "--file", f.to_str().unwrap()]);
    let snaps = lines.lines().filter(|l| l.contains("\"type\":\"snapshot\"")).count();
    assert_eq!(snaps, 10);
    assert_eq!(lines.lines().filter(|l| l.contains("\"type\":\"ack\"")).count(), 2);
}

#[test]
fn bad_flags_fail() {
    let out = Command::new(env!("CARGO_BIN_EXE_handnav"))
        .args(["run", "--task", "juggling"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
