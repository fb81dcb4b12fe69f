use std::fs;
use std::process::Command;

fn kserver(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_kserver")).args(args).output().expect("binary runs")
}

#[test]
fn run_writes_ledger_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = kserver(&["run", "--k", "1", "--steps", "12", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ledger = fs::read_to_string(out.join("ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 13);
    assert!(ledger.starts_with("step,request,forwarded,"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["violations"], 0);
    assert_eq!(summary["mode"], "barely-random");
    assert_eq!(summary["bits"]["total"], summary["bits"]["after_init"]);
}

#[test]
fn identical_seeds_give_identical_ledgers() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<String> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let o = kserver(&["run", "--k", "2", "--steps", "15", "--seed", "11", "--out", out.to_str().unwrap()]);
            assert!(o.status.success());
            fs::read_to_string(out.join("ledger.csv")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn config_file_trace_and_opt() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"mode":"advice","instance":{"kind":"hst","branching":[2,2],"top":10},"generator":{"name":"uniform"},"k":2,"steps":8}"#,
    )
    .unwrap();
    let gen = dir.path().join("gen");
    let o = kserver(&["generate", "--config", cfg.to_str().unwrap(), "--out", gen.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = gen.join("trace.json");
    let o = kserver(&["opt", "--config", cfg.to_str().unwrap(), "--trace", trace.to_str().unwrap()]);
    assert!(o.status.success());
    let opt: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(opt["steps"], 8);

    let out = dir.path().join("audit");
    let o = kserver(&["audit", "--config", cfg.to_str().unwrap(), "--trace", trace.to_str().unwrap(), "--format", "json", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["opt"], opt["opt"]);
    assert!(out.join("ledger.json").exists());
}

#[test]
fn invalid_configuration_exits_non_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = kserver(&["run", "--k", "2", "--m", "4", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("2k²+k"));
    let o = kserver(&["run", "--mode", "sideways"]);
    assert!(!o.status.success());
}
