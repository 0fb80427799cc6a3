use std::path::PathBuf;
use std::process::Command;

use schedsim::cli::{main_with_args, OracleCheckReport};
use schedsim::config::{ConfigDocument, RunReport};

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name).display().to_string()
}

fn invoke(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("schedsim").chain(args.iter().copied());
    let code = main_with_args(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

#[test]
fn run_report_is_reproducible() {
    let small = data("small.json");
    let (code, a, err) = invoke(&["run", &small, "--trace"]);
    assert_eq!(code, 0, "{err}");
    let (_, b, _) = invoke(&["run", &small, "--trace"]);
    assert_eq!(a, b);
    let report: RunReport = serde_json::from_str(&a).unwrap();
    assert_eq!(report.intervals, 400);
    assert_eq!(report.flows.len(), 4);
    assert_eq!(report.trace.as_ref().unwrap().len(), 400);
    assert_eq!(report.config_digest.len(), 64);

    let (_, c, _) = invoke(&["run", &small, "--seed", "8"]);
    let other: RunReport = serde_json::from_str(&c).unwrap();
    assert_ne!(other.config_digest, report.config_digest);
    assert_ne!(other.flows, report.flows);
}

#[test]
fn overrides_reach_the_simulation() {
    let small = data("small.json");
    let (code, out, err) = invoke(&["run", &small, "--override", "system.lambda=3", "--override", "system.intervals=50"]);
    assert_eq!(code, 0, "{err}");
    let report: RunReport = serde_json::from_str(&out).unwrap();
    assert_eq!((report.update_period, report.intervals), (3, 50));
}

#[test]
fn config_errors_exit_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(data("small.json")).unwrap()).unwrap();
    doc["topology"]["reliability"]["3"] = serde_json::json!(1.5);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, doc.to_string()).unwrap();
    let (code, _, err) = invoke(&["run", bad.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("topology.reliability.3"), "{err}");

    doc["topology"]["reliability"]["3"] = serde_json::json!(0.5);
    doc["flows"][1]["tau"] = serde_json::json!(9);
    std::fs::write(&bad, doc.to_string()).unwrap();
    let (code, _, err) = invoke(&["run", bad.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("flows[1]"), "{err}");

    let (code, _, _) = invoke(&["run", "/nonexistent/config.json"]);
    assert_eq!(code, 2);
    let (code, _, _) = invoke(&["run", &data("small.json"), "--policy", "fastest"]);
    assert_eq!(code, 2);
    let (code, _, _) = invoke(&["frobnicate"]);
    assert_eq!(code, 2);
}

#[test]
fn runtime_errors_exit_1() {
    let (code, _, _) = invoke(&["run", &data("small.json"), "--out", "/nonexistent-dir/report.json"]);
    assert_eq!(code, 1);
}

#[test]
fn sweep_policy_list_is_required() {
    let small = data("small.json");
    assert_eq!(invoke(&["sweep", &small]).0, 2);
    assert_eq!(invoke(&["sweep", &small, "--policy", ""]).0, 2);
    assert_eq!(invoke(&["sweep", &small, "--policy", " , "]).0, 2);
    assert_eq!(invoke(&["sweep", &small, "--policy", "greedy", "--alpha-step", "0"]).0, 2);
}

#[test]
fn sweep_output_ignores_job_count() {
    let small = data("small.json");
    let args = |jobs: &'static str| {
        vec!["--jobs", jobs, "sweep", small.as_str(), "--policy", "greedy,random,static,csf", "--alpha-step", "0.25", "--beta-step", "0.5"]
    };
    let (code, one, err) = invoke(&args("1"));
    assert_eq!(code, 0, "{err}");
    let (_, many, _) = invoke(&args("4"));
    assert_eq!(one, many);
    let lines: Vec<&str> = one.lines().collect();
    assert_eq!(lines.iter().filter(|l| **l == "alpha,beta,policy,fulfilled,max_debt").count(), 4);
    assert_eq!(lines.len(), 4 * (1 + 5 * 3));

    let dir = tempfile::tempdir().unwrap();
    let mut a = args("2");
    a.extend(["--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(invoke(&a).0, 0);
    let greedy = std::fs::read_to_string(dir.path().join("region_greedy.csv")).unwrap();
    assert!(one.starts_with(&greedy));
}

#[test]
fn oracle_check_reports_gaps() {
    let (code, out, err) = invoke(&["oracle-check", "--instances", "40", "--seed", "3"]);
    assert_eq!(code, 0, "{err}");
    let report: OracleCheckReport = serde_json::from_str(&out).unwrap();
    assert_eq!(report.instances, 40);
    assert!(report.max_gap <= 1e-9);
    assert_eq!(report.violations, 0);
    let worst = report.worst.unwrap();
    assert!(worst.config.system_config().is_ok());

    let (code, out, _) = invoke(&["oracle-check", "--instances", "40", "--mode", "half", "--max-T", "6"]);
    assert_eq!(code, 0);
    let report: OracleCheckReport = serde_json::from_str(&out).unwrap();
    assert_eq!(report.violations, 0);

    let (_, again, _) = invoke(&["--jobs", "1", "oracle-check", "--instances", "40", "--mode", "half", "--max-T", "6"]);
    assert_eq!(out, again);
}

#[test]
fn oracle_check_guard_names_bounds() {
    let (code, _, err) = invoke(&["oracle-check", "--max-sensors", "9", "--max-flows", "6"]);
    assert_eq!(code, 2);
    assert!(err.contains("max-sensors") && err.contains("max-flows") && err.contains("state-cap"), "{err}");
    let (code, _, _) = invoke(&["oracle-check", "--policy", "random"]);
    assert_eq!(code, 2);
}

#[test]
fn scenarios_parse_back() {
    let (code, out, _) = invoke(&["scenarios", "--seed", "5"]);
    assert_eq!(code, 0);
    let all: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&out).unwrap();
    assert_eq!(all.len(), 3);
    for (name, v) in all {
        let doc = ConfigDocument::from_value(v).unwrap();
        let cfg = doc.system_config().unwrap();
        assert_eq!(cfg.slots, 10, "{name}");
        assert!(doc.region.is_some());
    }
    let (code, one, _) = invoke(&["scenarios", "--name", "path-half-duplex"]);
    assert_eq!(code, 0);
    assert!(ConfigDocument::from_json(&one).unwrap().system_config().unwrap().is_path_topology());
    assert_eq!(invoke(&["scenarios", "--name", "nope"]).0, 2);
}

#[test]
fn binary_honors_jobs_env() {
    let bin = env!("CARGO_BIN_EXE_schedsim");
    let small = data("small.json");
    let run = |jobs: &str| {
        Command::new(bin)
            .env("SCHEDSIM_JOBS", jobs)
            .args(["sweep", &small, "--policy", "greedy", "--alpha-step", "0.5", "--beta-step", "0.5"])
            .output()
            .unwrap()
    };
    let (a, b) = (run("1"), run("3"));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let bad = Command::new(bin).args(["sweep", &small, "--policy", ""]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
