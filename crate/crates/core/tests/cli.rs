use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_etcoord"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn exec(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn etcoord")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_scenario(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn power_run_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("power");
    let o = exec(
        bin()
            .args([
                "run",
                "--flow",
                "event-constrained",
                "--lambda",
                "0.2",
                "--sigma",
                "0.9",
            ])
            .args(["--step", "1e-2", "--horizon", "60", "--scenario"])
            .arg(scenario("power.json"))
            .arg("--out")
            .arg(&out),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "trajectory.csv",
        "events.csv",
        "events.json",
        "stats.json",
        "verification.json",
        "histogram.csv",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let hist = std::fs::read_to_string(out.join("histogram.csv")).unwrap();
    assert!(hist.lines().count() > 1);
    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(
        traj.lines().next().unwrap(),
        "t,x_1,x_2,x_3,x_4,x_5,objective,feasible"
    );
    let events = std::fs::read_to_string(out.join("events.csv")).unwrap();
    assert_eq!(
        events.lines().next().unwrap(),
        "k,t,initiators,msgs_up,msgs_down"
    );
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["lambda"], 0.2);
    assert_eq!(manifest["config"]["flow"], "event-constrained");
    assert_eq!(manifest["scenario_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn quadratic_run_verifies_under_strict() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("q2");
    let o = exec(
        bin()
            .args([
                "run",
                "--flow",
                "event-unconstrained",
                "--strict",
                "--scenario",
            ])
            .arg(scenario("q2.json"))
            .arg("--out")
            .arg(&out),
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let report = read_json(&out.join("verification.json"));
    for check in ["monotone_descent", "miet", "ratio_bound", "convergence"] {
        assert_eq!(report[check]["status"], "pass", "{check}");
    }
    assert_eq!(report["feasibility"]["status"], "skipped");
}

#[test]
fn usage_errors_leave_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let o = exec(
        bin()
            .args(["run", "--bogus", "--scenario"])
            .arg(scenario("q2.json"))
            .arg("--out")
            .arg(&out),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());

    let o = exec(
        bin()
            .args(["run", "--scenario", "does-not-exist.json", "--out"])
            .arg(&out),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());

    let o = exec(
        bin()
            .args(["sweep", "--count", "0", "--scenario"])
            .arg(scenario("power.json"))
            .arg("--out")
            .arg(&out),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn domain_and_numeric_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let infeasible = write_scenario(
        tmp.path(),
        "infeasible.json",
        r#"{"n": 1, "costs": [{"poly": [0, 0, 1]}],
            "coupling": {"quadratic": {"Q": [[1]], "q": [0]}},
            "boxes": [[0, 1]], "initial_state": [2.0]}"#,
    );
    let out = tmp.path().join("inf");
    let o = exec(
        bin()
            .args(["run", "--scenario"])
            .arg(&infeasible)
            .arg("--out")
            .arg(&out),
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.exists());

    let stiff = write_scenario(
        tmp.path(),
        "stiff.json",
        r#"{"n": 1, "costs": [{"poly": [0, 0, 50000]}],
            "coupling": {"quadratic": {"Q": [[0]], "q": [0]}},
            "boxes": null, "initial_state": [1.0]}"#,
    );
    let o = exec(
        bin()
            .args(["run", "--flow", "continuous-unconstrained", "--scenario"])
            .arg(&stiff)
            .arg("--out")
            .arg(tmp.path().join("stiff")),
    );
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn strict_fails_on_short_horizon() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("short");
    let args = |strict: bool| {
        let mut c = bin();
        c.args(["run", "--horizon", "1", "--scenario"])
            .arg(scenario("q2.json"))
            .arg("--out")
            .arg(&out);
        if strict {
            c.arg("--strict");
        }
        c
    };
    assert_eq!(exec(&mut args(false)).status.code(), Some(0));
    assert_eq!(exec(&mut args(true)).status.code(), Some(5));
    let report = read_json(&out.join("verification.json"));
    assert_eq!(report["convergence"]["status"], "fail");
    assert!(report["convergence"]["margin"].as_f64().unwrap() > 0.0);
}

#[test]
fn sweep_reports_aggregate_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (rep, jobs) in [(0, "1"), (1, "3")] {
        let out = tmp.path().join(format!("s{rep}"));
        let o = exec(
            bin()
                .args([
                    "sweep",
                    "--count",
                    "10",
                    "--seed",
                    "7",
                    "--horizon",
                    "60",
                    "--jobs",
                    jobs,
                ])
                .arg("--scenario")
                .arg(scenario("power.json"))
                .arg("--out")
                .arg(&out),
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(std::fs::read(out.join("sweep.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let v: Value = serde_json::from_slice(&outputs[0]).unwrap();
    let agg = &v["aggregate"];
    assert_eq!(agg["runs_ok"], 10);
    for key in [
        "mean_min_interevent",
        "std_min_interevent",
        "mean_interevent",
        "mean_updates",
    ] {
        assert!(agg[key].is_f64(), "{key} missing");
    }
    assert_eq!(v["runs"].as_array().unwrap().len(), 10);
}

#[test]
fn compare_marks_events_and_agrees() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cmp");
    let o = exec(
        bin()
            .args(["compare", "--flow", "event-unconstrained", "--scenario"])
            .arg(scenario("q2.json"))
            .arg("--out")
            .arg(&out),
    );
    assert!(o.status.success());
    let report = read_json(&out.join("compare.json"));
    assert!(report["final_distance"].as_f64().unwrap() < 1e-3);
    let events = report["event_stats"]["total_events"].as_u64().unwrap();
    let csv = std::fs::read_to_string(out.join("compare.csv")).unwrap();
    let markers = csv.lines().filter(|l| l.starts_with("event,")).count();
    assert_eq!(markers as u64, events);
    assert!(
        report["event"]["snapshot_updates"].as_u64()
            < report["continuous"]["snapshot_updates"].as_u64()
    );

    let out = tmp.path().join("cmp-power");
    let o = exec(
        bin()
            .args(["compare", "--flow", "event-constrained", "--scenario"])
            .arg(scenario("power.json"))
            .arg("--out")
            .arg(&out),
    );
    assert!(o.status.success());
    let report = read_json(&out.join("compare.json"));
    assert_eq!(report["event"]["all_feasible"], true);
    assert_eq!(report["continuous"]["all_feasible"], true);
}

#[test]
fn rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let o = exec(
        bin()
            .args([
                "run",
                "--mode",
                "computation",
                "--sigma",
                "0.5",
                "--scenario",
            ])
            .arg(scenario("power.json"))
            .arg("--out")
            .arg(&first),
    );
    assert!(o.status.success());
    let again = tmp.path().join("again");
    let o = exec(
        bin()
            .args(["rerun", "--manifest"])
            .arg(first.join("manifest.json"))
            .arg("--out")
            .arg(&again),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = read_json(&first.join("manifest.json"));
    for f in manifest["outputs"].as_array().unwrap() {
        let f = f.as_str().unwrap();
        assert_eq!(
            std::fs::read(first.join(f)).unwrap(),
            std::fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = exec(
        bin()
            .env("ETCOORD_OUT", tmp.path())
            .args(["run", "--horizon", "2", "--scenario"])
            .arg(scenario("q2.json")),
    );
    assert!(o.status.success());
    assert!(tmp.path().join("q2-run").join("manifest.json").is_file());
}

#[test]
fn builtin_power_scenario_matches_file() {
    let o = exec(bin().args(["scenario", "power"]));
    assert!(o.status.success());
    let emitted: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(emitted, read_json(&scenario("power.json")));
}
