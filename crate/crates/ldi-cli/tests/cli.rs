//! Command line contract: exit codes, report shape, determinism across
//! thread counts, and file output. Heavy numeric behavior lives in the
//! acceptance suite; these runs all finish in well under a second.

use std::path::PathBuf;
use std::process::Command;

use ldi::problem::Report;
use serde_json::Value;

fn example(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../examples")
        .join(name)
        .to_str()
        .unwrap()
        .to_string()
}

fn run(args: &[&str]) -> (String, String, i32) {
    let out = Command::new(env!("CARGO_BIN_EXE_ldi"))
        .args(args)
        .output()
        .expect("the binary should run");
    (
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
        out.status.code().unwrap_or(-1),
    )
}

fn tmp_path(tag: &str) -> PathBuf {
    std::env::temp_dir().join(format!("ldi-cli-test-{}-{tag}.json", std::process::id()))
}

#[test]
fn help_prints_usage_and_exits_cleanly() {
    let (stdout, _, code) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("Usage"), "help text:\n{stdout}");
    let (_, _, code) = run(&["certify", "--help"]);
    assert_eq!(code, 0);
}

#[test]
fn bad_invocations_exit_with_three() {
    let ex2 = example("example2.json");

    let (_, stderr, code) = run(&["falsify", "--problem", &ex2, "--no-such-flag"]);
    assert_eq!(code, 3, "unknown flag: {stderr}");

    let (_, stderr, code) = run(&["falsify", "--problem", "/nonexistent/missing.json"]);
    assert_eq!(code, 3, "missing file: {stderr}");

    let (_, stderr, code) = run(&["falsify", "--problem", &ex2, "--candidate", "nope"]);
    assert_eq!(code, 3);
    assert!(stderr.contains("tight"), "the error should list known candidates: {stderr}");

    let (_, stderr, code) = run(&["tighten", "--problem", &ex2, "--family", "nope"]);
    assert_eq!(code, 3);
    assert!(stderr.contains("mvt_to_overtight"), "should list known families: {stderr}");

    // "mvt" already names a candidate in this file; refusing beats clobbering
    let (_, stderr, code) = run(&["mvt", "--problem", &ex2, "--candidate", "mvt"]);
    assert_eq!(code, 3);
    assert!(stderr.contains("mvt"), "collision message: {stderr}");

    let (_, stderr, code) = run(&["certify", "--problem", &ex2, "--eps", "0"]);
    assert_eq!(code, 3, "zero tolerance: {stderr}");
}

#[test]
fn exit_codes_track_outcomes() {
    let ex2 = example("example2.json");

    let (stdout, _, code) = run(&["falsify", "--problem", &ex2, "--candidate", "tight"]);
    let report: Report = serde_json::from_str(&stdout).unwrap();
    assert_eq!((report.outcome.as_str(), code), ("not_falsified", 2));
    assert!(report.value < 0.0, "best margin {} should still be negative", report.value);

    let (stdout, _, code) = run(&["falsify", "--problem", &ex2, "--candidate", "overtight"]);
    let report: Report = serde_json::from_str(&stdout).unwrap();
    assert_eq!((report.outcome.as_str(), code), ("falsified", 1));

    let (stdout, _, code) =
        run(&["certify", "--problem", &ex2, "--candidate", "tight", "--eps", "1e-6"]);
    let report: Report = serde_json::from_str(&stdout).unwrap();
    assert_eq!((report.outcome.as_str(), code), ("certified", 0));
    assert!(report.value >= -1e-6, "certified margin {}", report.value);

    // check = falsify, then certify if nothing was found
    let (stdout, _, code) =
        run(&["check", "--problem", &ex2, "--candidate", "tight", "--eps", "1e-6"]);
    let report: Report = serde_json::from_str(&stdout).unwrap();
    assert_eq!((report.outcome.as_str(), code), ("certified", 0));
    assert!(report.stats.random_starts > 0 && report.stats.boxes_processed > 0);
}

#[test]
fn reports_round_trip_and_echo_the_configuration() {
    let ex2 = example("example2.json");
    let (stdout, _, code) = run(&[
        "falsify",
        "--problem",
        &ex2,
        "--candidate",
        "overtight",
        "--eps",
        "1e-5",
        "--seed",
        "7",
    ]);
    assert_eq!(code, 1);
    let report: Report = serde_json::from_str(&stdout).unwrap();
    let again: Report = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(report.value, again.value);
    assert_eq!(report.outcome, again.outcome);

    let w = report.witness.as_ref().expect("a falsified report carries its witness");
    assert_eq!(report.value, w.objective);
    assert_eq!(w.x.len(), 2);
    assert_eq!(w.y.len(), 3, "the separator lives in the lifted space");

    assert_eq!(report.config_echo["eps"], 1e-5);
    assert_eq!(report.config_echo["seed"], 7);
    assert_eq!(report.config_echo["subcommand"], "falsify");
    assert_eq!(report.config_echo["candidate"], "overtight");
    assert_eq!(report.tool_version, env!("CARGO_PKG_VERSION"));
}

#[test]
fn thread_count_does_not_change_results() {
    let ex2 = example("example2.json");
    let mut reports = Vec::new();
    for threads in ["1", "2"] {
        let (stdout, _, code) = run(&[
            "certify",
            "--problem",
            &ex2,
            "--candidate",
            "tight",
            "--eps",
            "1e-6",
            "--threads",
            threads,
        ]);
        assert_eq!(code, 0);
        let mut v: Value = serde_json::from_str(&stdout).unwrap();
        v["stats"]["wall_ms"] = 0.into();
        v["config_echo"]["threads"] = 0.into();
        reports.push(v);
    }
    assert_eq!(reports[0], reports[1], "the box queue must be deterministic");
}

#[test]
fn report_flag_writes_the_file_instead_of_stdout() {
    let ex2 = example("example2.json");
    let path = tmp_path("report");
    let (stdout, _, code) = run(&[
        "falsify",
        "--problem",
        &ex2,
        "--candidate",
        "overtight",
        "--report",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code, 1, "the exit code still reflects the outcome");
    assert!(stdout.is_empty(), "stdout should stay quiet: {stdout}");
    let report: Report = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(report.outcome, "falsified");
    std::fs::remove_file(&path).ok();
}

#[test]
fn mvt_extends_the_problem_file_without_touching_the_rest() {
    let ex2 = example("example2.json");
    let path = tmp_path("mvt");
    let (_, _, code) = run(&[
        "mvt",
        "--problem",
        &ex2,
        "--candidate",
        "built",
        "--report",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let out: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let orig: Value = serde_json::from_str(&std::fs::read_to_string(&ex2).unwrap()).unwrap();
    assert!(out["candidates"]["built"].is_array());
    for name in ["mvt", "tight", "overtight"] {
        assert_eq!(out["candidates"][name], orig["candidates"][name]);
    }
    assert_eq!(out["dynamics"], orig["dynamics"]);
    assert_eq!(out["families"], orig["families"]);

    // the emitted file is itself a usable problem
    let (stdout, _, code) = run(&[
        "certify",
        "--problem",
        path.to_str().unwrap(),
        "--candidate",
        "built",
        "--eps",
        "1e-4",
    ]);
    assert_eq!(code, 0, "the built candidate should certify: {stdout}");
    std::fs::remove_file(&path).ok();
}
