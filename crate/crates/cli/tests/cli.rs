use std::process::Command;

fn ranslice(out: &std::path::Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ranslice"));
    c.env("RANSLICE_OUT", out);
    c
}

#[test]
fn simulate_writes_versioned_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let st = ranslice(dir.path())
        .args(["simulate", "--seed", "4", "--steps", "150", "--controller", "proportional-healing"])
        .status()
        .unwrap();
    assert!(st.success());
    let run = dir.path().join("proportional-healing-seed4");
    for f in ["steps.csv", "kpis.csv", "healing.csv", "orchestration.csv", "intents.csv"] {
        let text = std::fs::read_to_string(run.join(f)).unwrap();
        assert!(text.starts_with("# ranslice-csv v1\n"), "{f}");
    }
    assert!(run.join("summary.json").exists());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"seeds": [], "steps": 0}"#).unwrap();
    let o = ranslice(dir.path()).args(["simulate", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("seeds") && err.contains("steps"), "{err}");

    let o = ranslice(dir.path()).args(["scenario", "--id", "q"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = ranslice(dir.path()).args(["simulate", "--controller", "magic"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn parse_intent_accepts_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let o = ranslice(dir.path()).args(["parse-intent", "--text", "increase eMBB throughput by 10%"]).output().unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("accepted"));
    let o = ranslice(dir.path()).args(["parse-intent", "--text", "increase eMBB throughput by 500%"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_dataset_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = ranslice(dir.path())
        .args(["train-hdm", "--dataset"])
        .arg(dir.path().join("nope.json"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}
