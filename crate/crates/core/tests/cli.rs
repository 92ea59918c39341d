mod common;

use std::path::Path;
use std::process::{Command, Output};

fn navbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_navbench"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn score_prints_oracle_success_rate() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("cached-oracle");
    common::copy_dir(&common::fixtures().join("golden/cached-oracle"), &run);
    let suite = common::suite_dir();
    let out = navbench(&["score", "--suite", path(&suite), "--run", path(&run)]);
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&out);
    assert!(text.lines().any(|l| l == "SR 1.000"), "{text}");
    assert!(text.lines().any(|l| l == "ACP 1.000"), "{text}");
    // Scoring the same artifacts again rewrites identical reports.
    let golden = common::fixtures().join("golden/cached-oracle");
    for name in ["report.json", "report.csv", "radar.csv"] {
        assert_eq!(common::read(run.join(name)), common::read(golden.join(name)), "{name}");
    }
}

#[test]
fn validate_suite_accepts_the_fixture_suite() {
    let out = navbench(&["validate-suite", "--suite", path(&common::suite_dir())]);
    assert!(out.status.success(), "{out:?}");
    assert!(stdout(&out).starts_with("ok: 11 tasks, 3 apps"));
}

#[test]
fn validate_suite_names_a_task_whose_reference_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = tmp.path().join("suite");
    common::copy_dir(&common::suite_dir(), &suite);
    let evaluator = suite.join("evaluators/notes-delete-1.json");
    let broken = common::read(&evaluator).replace("\"Groceries\"", "\"No such note\"");
    std::fs::write(&evaluator, broken).unwrap();

    let out = navbench(&["validate-suite", "--suite", path(&suite)]);
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    assert!(stdout(&out).contains("notes-delete"), "{}", stdout(&out));
}

#[test]
fn validate_suite_exits_one_on_an_unloadable_suite() {
    let tmp = tempfile::tempdir().unwrap();
    let out = navbench(&["validate-suite", "--suite", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(1), "{out:?}");
}

#[test]
fn serialize_obs_matches_golden_text() {
    let screens = common::fixtures().join("screens");
    let screen = screens.join("login.json");
    for (mode, golden) in [("a11y_full", "login.full.txt"), ("a11y_simplified", "login.simple.txt")] {
        let out = navbench(&["serialize-obs", "--mode", mode, "--screen", path(&screen)]);
        assert!(out.status.success(), "{out:?}");
        assert_eq!(stdout(&out), common::read(screens.join(golden)), "{mode}");
    }
}

#[test]
fn serialize_obs_writes_the_marked_screenshot() {
    let screens = common::fixtures().join("screens");
    let tmp = tempfile::tempdir().unwrap();
    let png = tmp.path().join("som.png");
    let out = navbench(&[
        "serialize-obs",
        "--mode",
        "annotated_image",
        "--screen",
        path(&screens.join("login.json")),
        "--screenshot",
        path(&screens.join("login.png")),
        "--out",
        path(&png),
    ]);
    assert!(out.status.success(), "{out:?}");
    assert_eq!(std::fs::read(&png).unwrap(), std::fs::read(screens.join("login.som.png")).unwrap());
    assert_eq!(stdout(&out), "[0] 180,228\n[1] 180,388\n");
}

#[test]
fn usage_and_configuration_errors_exit_two() {
    assert_eq!(navbench(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(navbench(&["score", "--suite"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let out = navbench(&[
        "score",
        "--suite",
        path(&common::suite_dir()),
        "--run",
        path(&tmp.path().join("missing")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn oracle_end_to_end_and_probes_through_the_cli() {
    let suite = common::suite_dir();
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("oracle");
    let out = navbench(&["run-e2e", "--suite", path(&suite), "--run", path(&run), "--backend", "oracle"]);
    assert!(out.status.success(), "{out:?}");
    assert!(stdout(&out).lines().any(|l| l == "SR 1.000"));
    for dim in ["knowledge", "completion", "grounding", "focused"] {
        let out = navbench(&["run-probe", dim, "--suite", path(&suite), "--run", path(&run), "--backend", "oracle"]);
        assert!(out.status.success(), "{dim}: {out:?}");
    }
    let radar = tmp.path().join("radar");
    let out = navbench(&[
        "report",
        "--suite",
        path(&suite),
        "--run",
        path(&run),
        "--format",
        "radar",
        "--out",
        path(&radar),
    ]);
    assert!(out.status.success(), "{out:?}");
    let text = std::fs::read_to_string(&radar).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "run,goal_understanding,app_knowledge,planning,grounding,instruction_following,end_to_end_sr");
    assert_eq!(rows[1], "oracle,1.000,1.000,1.000,1.000,1.000,1.000");
}

#[test]
fn sabotaged_run_fails_every_task() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("sabotaged");
    let out = navbench(&[
        "run-e2e",
        "--suite",
        path(&common::suite_dir()),
        "--run",
        path(&run),
        "--backend",
        "sabotaged",
        "--workers",
        "1",
    ]);
    assert!(out.status.success(), "{out:?}");
    let text = stdout(&out);
    assert!(text.lines().any(|l| l == "SR 0.000"), "{text}");
    assert!(text.lines().any(|l| l.starts_with("testing: SR 0.000")), "{text}");
}
