use std::path::PathBuf;
use std::process::Command;

fn scenario() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/typical-site.toml")
}

fn harness(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rgma-harness")).args(args).output().unwrap()
}

#[test]
fn runs_are_reproducible_and_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let mut digests = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let o = harness(&["run", scenario().to_str().unwrap(), "--out", out.to_str().unwrap(), "--window-ms", "5000"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let stdout = String::from_utf8(o.stdout).unwrap();
        digests.push(stdout.lines().next().unwrap().to_string());
        let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
        assert!(summary.starts_with("component,window_start,window_end,availability,"));
        assert!(summary.lines().count() > 6);
        let records = std::fs::read_to_string(out.join("records.csv")).unwrap();
        assert!(records.lines().count() > 100);
        let state: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("final.json")).unwrap()).unwrap();
        assert!(state["stores"]["latest-sink"].as_array().is_some_and(|s| !s.is_empty()));
    }
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn validate_and_template() {
    let o = harness(&["validate", scenario().to_str().unwrap()]);
    assert!(o.status.success());

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "duration_ms = 1000\n[registries]\ncount = 1\n[[producers]]\nid = \"p\"\ntype = \"stream\"\ntable = \"Nope\"\nperiod_ms = 10\n").unwrap();
    let o = harness(&["validate", bad.to_str().unwrap()]);
    assert!(!o.status.success());

    let o = harness(&["typical", "--sites", "2", "--seed", "9"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let sc = rgma_core::harness::Scenario::from_toml(&text).unwrap();
    assert_eq!(sc.producers.len(), 8);
    assert_eq!(sc.seed, 9);
}
