//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach standard output.

#[path = "../common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use navbench::action::{parse_action, render_action, Action, Direction, Key, Point};
use navbench::backend::{CachedSource, ResponseStore, ScriptBook};
use navbench::env::{action_key, Environment, ReplayEnv};
use navbench::evaluator::{assertion_positions, evaluate, Assertion, EvalNode};
use navbench::model::{fingerprint, StopReason, Trajectory, UIScreen};
use navbench::observation::{render_som, serialize_full, serialize_simplified, som_marks};
use navbench::probes::{
    score_completion, score_focused, score_grounding, score_knowledge, CompletionItem,
    FocusedItem, GroundingItem, KnowledgeDimension, KnowledgeItem, Paired, ProbeRecord,
};
use navbench::report::RunReport;
use navbench::runner::{run_e2e, RunConfig};
use navbench::suite::{load_suite, parse_doc, parse_jsonl, Suite};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use serde_json::Value;

use common::oracle;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !($cond) {
            return Err(format!($($fmt)+));
        }
    };
}

fn suite() -> Result<Suite, String> {
    load_suite(common::suite_dir()).map_err(|e| e.to_string())
}

/// Responses replaying each reference, optionally without its final action,
/// built from the stored references rather than any library helper.
fn scripts(suite: &Suite, sabotage: bool) -> ScriptBook {
    let responses = suite
        .tasks
        .iter()
        .map(|lt| {
            let mut lines: Vec<String> = lt
                .reference
                .steps
                .iter()
                .filter_map(|s| s.parsed.as_ref().ok())
                .filter(|a| **a != Action::Press(Key::Stop))
                .map(render_action)
                .collect();
            if sabotage {
                lines.pop();
            }
            lines.push("press [stop]".to_string());
            (lt.task.id.clone(), lines)
        })
        .collect();
    ScriptBook {
        responses,
        repeat_last: false,
    }
}

fn mentions_final_phase(nodes: &[EvalNode]) -> bool {
    nodes.iter().any(|n| match n {
        EvalNode::Assertion(Assertion::StopPage { .. } | Assertion::LastAction { .. }) => true,
        EvalNode::Assertion(_) => false,
        EvalNode::Evaluator(e) => mentions_final_phase(&e.list),
    })
}

fn e2e_run(suite: &Suite, book: &ScriptBook, dir: &Path) -> Result<RunReport, String> {
    let cfg = RunConfig::new(suite, "script");
    run_e2e(suite, &cfg, book, dir, 4).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------

fn oracle_replay() -> Outcome {
    let suite = suite()?;
    let tasks = suite.tasks.len();
    let apps = suite.app_ids().len();
    let lengths: Vec<usize> = suite
        .tasks
        .iter()
        .map(|t| t.reference.steps.iter().filter(|s| s.parsed.as_ref().is_ok_and(|a| !a.is_stop())).count())
        .collect();
    let mean = lengths.iter().sum::<usize>() as f64 / tasks.max(1) as f64;
    ensure!(tasks >= 10, "only {tasks} tasks");
    ensure!(apps >= 3, "only {apps} apps");
    ensure!(mean.total_cmp(&5.0).is_ge(), "mean reference length {mean:.2} < 5");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let report = e2e_run(&suite, &scripts(&suite, false), &dir.path().join("oracle"))?;
    let wall = start.elapsed();
    let overall = &report.e2e.as_ref().ok_or("no e2e section")?.overall;
    ensure!(overall.sr == Some(1.0), "SR {:?}", overall.sr);
    ensure!(overall.acp == Some(1.0), "ACP {:?}", overall.acp);
    ensure!(wall < Duration::from_secs(10), "took {wall:?}");
    Ok(format!(
        "{tasks} tasks, {apps} apps, mean length {mean:.2}; SR 1.000 ACP 1.000 in {:.3}s",
        wall.as_secs_f64()
    ))
}

fn sabotaged_oracle() -> Outcome {
    let suite = suite()?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = e2e_run(&suite, &scripts(&suite, true), &dir.path().join("sabotaged"))?;
    let rows = &report.e2e.as_ref().ok_or("no e2e section")?.tasks;
    let (mut final_phase, mut partial) = (0, 0);
    for (lt, row) in suite.tasks.iter().zip(rows) {
        ensure!(lt.task.id == row.task_id, "row order");
        if lt.evaluators.iter().any(|e| mentions_final_phase(&e.list)) {
            final_phase += 1;
            ensure!(!row.pass, "{} passed despite a dropped final action", row.task_id);
        }
        if row.total > 1 && row.satisfied > 0 {
            partial += 1;
            ensure!(
                row.acp_fraction > 0.0 && row.acp_fraction < 1.0,
                "{} ACP {}",
                row.task_id,
                row.acp_fraction
            );
        }
    }
    ensure!(final_phase > 0, "no task has a StopPage or LastAction assertion");
    let sr = report.e2e.as_ref().unwrap().overall.sr;
    ensure!(final_phase < rows.len() || sr == Some(0.0), "SR {sr:?}");
    Ok(format!(
        "{final_phase}/{} tasks with final-phase assertions fail; {partial} partial tasks have 0 < ACP < 1; SR {:.3}",
        rows.len(),
        sr.unwrap_or(f64::NAN)
    ))
}

fn evaluator_vs_brute_force() -> Outcome {
    let mut rng = TestRng::from_seed(RngAlgorithm::ChaCha, &[7; 32]);
    let start = Instant::now();
    let (instances, mut satisfied) = (2000, 0);
    for k in 0..instances {
        let run = oracle::random_run(&mut rng, 6);
        let tree = oracle::random_tree(&mut rng, &run, 3, 4);
        let t = oracle::lower_run(&run);
        let e = oracle::lower_tree(&tree);
        ensure!(t.len() <= 6 && e.depth() <= 3, "instance {k} out of range");
        for atom in oracle::atoms(&tree) {
            let want = oracle::positions(atom, &run);
            let got = assertion_positions(&oracle::lower_atom(atom), &t);
            ensure!(want == got, "instance {k}: {atom:?} at {got:?}, oracle {want:?}");
        }
        let want = oracle::holds(&tree, &run);
        ensure!(evaluate(&e, &t) == want, "instance {k}: disagrees with oracle ({want}) on {tree:?} over {run:?}");
        satisfied += usize::from(want);
    }
    let wall = start.elapsed();
    ensure!(wall < Duration::from_secs(60), "took {wall:?}");
    ensure!(satisfied > instances / 10 && satisfied < instances - instances / 10, "degenerate mix: {satisfied} satisfied");
    Ok(format!(
        "{instances}/{instances} agree ({satisfied} satisfied) in {:.2}s",
        wall.as_secs_f64()
    ))
}

fn action_strategy() -> impl Strategy<Value = Action> {
    let point = (any::<u32>(), any::<u32>()).prop_map(|(x, y)| Point::new(x, y));
    let payload = "[^\r\n]{0,40}";
    let dir = prop::sample::select(Direction::ALL.to_vec());
    let key = prop::sample::select(Key::ALL.to_vec());
    prop_oneof![
        any::<u32>().prop_map(Action::ClickElem),
        any::<u32>().prop_map(Action::LongClickElem),
        (any::<u32>(), payload).prop_map(|(i, s)| Action::TextElem(i, s)),
        (any::<u32>(), dir).prop_map(|(i, d)| Action::SwipeElem(i, d)),
        point.clone().prop_map(Action::ClickXY),
        point.clone().prop_map(Action::LongClickXY),
        (point.clone(), payload).prop_map(|(p, s)| Action::TextXY(p, s)),
        (point.clone(), point).prop_map(|(a, b)| Action::SwipeXYXY(a, b)),
        key.prop_map(Action::Press),
    ]
}

fn grammar() -> Outcome {
    let cases = 10_000;
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&action_strategy(), |a| {
            let line = render_action(&a);
            prop_assert_eq!(parse_action(&line), Ok(a));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let mut typed = 0;
    for (raw, reason) in common::MALFORMED {
        let result = catch_unwind(|| parse_action(raw)).map_err(|_| format!("parser aborted on {raw:?}"))?;
        match result {
            Err(f) if f.reason.as_str() == *reason && f.raw == *raw => typed += 1,
            other => return Err(format!("{raw:?}: expected {reason}, got {other:?}")),
        }
    }
    ensure!(typed >= 50, "corpus has only {typed} strings");
    Ok(format!("{cases} round-trips; {typed} malformed strings give typed failures"))
}

fn tag(line: &str) -> Option<usize> {
    let rest = line.trim_start().strip_prefix('[')?;
    rest[..rest.find(']')?].parse().ok()
}

fn check_tree(screen: &UIScreen) -> Result<(), TestCaseError> {
    let full = serialize_full(screen);
    let simple = serialize_simplified(screen);
    let lines: Vec<&str> = full.split('\n').collect();
    prop_assert_eq!(lines.len(), screen.node_count());
    let tags: Vec<usize> = lines.iter().filter_map(|l| tag(l)).collect();
    let expected: Vec<usize> = (0..screen.interactables().len()).collect();
    prop_assert_eq!(&tags, &expected);
    let simple_tags: Vec<usize> = if simple.is_empty() {
        Vec::new()
    } else {
        simple.split('\n').map(|l| tag(l).expect("every simplified line is tagged")).collect()
    };
    prop_assert_eq!(&simple_tags, &tags);
    for mark in som_marks(screen) {
        let node = screen.interactable(mark.index).expect("mark index is an element");
        prop_assert!(node.bounds.contains(mark.cx, mark.cy), "mark {:?} outside {:?}", mark, node.bounds);
    }
    Ok(())
}

fn serializer() -> Outcome {
    let cases = 200;
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&common::trees::screens(100), |s| check_tree(&s))
        .map_err(|e| e.to_string())?;

    let dir = common::fixtures().join("screens");
    let login = common::screen("login.json");
    let full = serialize_full(&login) + "\n";
    ensure!(full == common::read(dir.join("login.full.txt")), "login.full.txt drifted");
    let simple = serialize_simplified(&login) + "\n";
    ensure!(simple == common::read(dir.join("login.simple.txt")), "login.simple.txt drifted");
    let shot = std::fs::read(dir.join("login.png")).map_err(|e| e.to_string())?;
    let som = render_som(&shot, login.screen_size, &som_marks(&login)).map_err(|e| e.to_string())?;
    let golden = std::fs::read(dir.join("login.som.png")).map_err(|e| e.to_string())?;
    ensure!(som == golden, "login.som.png drifted");
    Ok(format!("{cases} random trees hold all four properties; 3 golden files byte-stable"))
}

fn metrics() -> Outcome {
    let m = common::metrics::definitional_cases();
    ensure!(m.sr == 2.0 / 3.0, "SR {}", m.sr);
    ensure!(m.acp_fraction == 0.75, "ACP fraction {}", m.acp_fraction);
    ensure!(m.repetition == 1.0 / 3.0, "repetition {}", m.repetition);
    ensure!(m.format_error == 0.25, "format error {}", m.format_error);
    Ok("SR 2/3, ACP 0.75, repetition 1/3, format-error 1/4".into())
}

fn probe_cases() -> Outcome {
    let dir = common::fixtures().join("probe_cases");
    let load = |name: &str| common::read(dir.join(name));
    let expected: Value = serde_json::from_str(&load("expected.json")).map_err(|e| e.to_string())?;
    let records = |name: &str| parse_jsonl::<ProbeRecord>(&load(name)).map_err(|e| e.to_string());
    let frac = |v: &Value| v[0].as_f64().unwrap() / v[1].as_f64().unwrap();
    let paired = |p: &Paired| {
        serde_json::json!({
            "original": {"items": p.original.items, "correct": p.original.correct, "unparsed": p.original.unparsed},
            "repaired": {"items": p.repaired.items, "correct": p.repaired.correct, "unparsed": p.repaired.unparsed},
        })
    };

    let items: Vec<GroundingItem> = parse_jsonl(&load("grounding_items.jsonl")).map_err(|e| e.to_string())?;
    let lookup = |r: &str| Some(common::screen(r));
    let g = score_grounding(&items, &records("grounding_records.jsonl")?, &lookup);
    let x = &expected["grounding"];
    for o in &g.items {
        ensure!(Value::Bool(o.correct) == x["hits"][&o.id], "grounding {} hit {}", o.id, o.correct);
        ensure!(
            Value::Bool(o.repaired_correct) == x["repaired_hits"][&o.id],
            "grounding {} repaired hit {}",
            o.id,
            o.repaired_correct
        );
    }
    ensure!(paired(&g.accuracy)["original"] == x["original"], "grounding original {:?}", g.accuracy.original);
    ensure!(paired(&g.accuracy)["repaired"] == x["repaired"], "grounding repaired {:?}", g.accuracy.repaired);
    ensure!(g.format_errors == x["format_errors"], "format errors {}", g.format_errors);

    let items: Vec<CompletionItem> = parse_jsonl(&load("completion_items.jsonl")).map_err(|e| e.to_string())?;
    let c = score_completion(&items, &records("completion_records.jsonl")?);
    let x = &expected["completion"];
    ensure!(serde_json::to_value(c.confusion).unwrap() == x["confusion"], "confusion {:?}", c.confusion);
    ensure!(c.acc_continue == Some(frac(&x["acc_continue"])), "acc_continue {:?}", c.acc_continue);
    ensure!(c.acc_stop == Some(frac(&x["acc_stop"])), "acc_stop {:?}", c.acc_stop);
    ensure!(c.overall == Some(frac(&x["overall"])), "overall {:?}", c.overall);
    ensure!(serde_json::to_value(&c.perfect).unwrap() == x["perfect"], "perfect {:?}", c.perfect);
    ensure!(c.task_success == Some(frac(&x["task_success"])), "task success {:?}", c.task_success);

    let items: Vec<KnowledgeItem> = parse_jsonl(&load("knowledge_items.jsonl")).map_err(|e| e.to_string())?;
    let k = score_knowledge(&items, &records("knowledge_records.jsonl")?);
    let x = &expected["knowledge"];
    ensure!(paired(&k.overall) == x["overall"], "knowledge overall {:?}", k.overall);
    for (dim, name) in [
        (KnowledgeDimension::GoalUnderstanding, "goal_understanding"),
        (KnowledgeDimension::AppKnowledge, "app_knowledge"),
    ] {
        let p = k.by_dimension.get(&dim).ok_or(format!("no {name} score"))?;
        ensure!(paired(p) == x[name], "{name} {p:?}");
    }

    let items: Vec<FocusedItem> = parse_jsonl(&load("focused_items.jsonl")).map_err(|e| e.to_string())?;
    let f = score_focused(&items, &records("focused_records.jsonl")?);
    let x = &expected["focused"];
    ensure!(f.items == x["items"] && f.violations == x["violations"], "focused {f:?}");

    // Points on the right and bottom edges lie outside the half-open box.
    let edge_misses = g.items.iter().filter(|o| ["gC", "gE"].contains(&o.id.as_str()) && !o.correct).count();
    ensure!(edge_misses == 2, "edge points counted as hits");
    Ok(format!(
        "grounding {}/{} (repaired {}), 2 half-open edge misses; completion {}/{}; knowledge {}/{}; focused {} violations",
        g.accuracy.original.correct,
        g.accuracy.original.items,
        g.accuracy.repaired.correct,
        c.confusion.continue_as_continue + c.confusion.stop_as_stop,
        c.confusion.continue_total() + c.confusion.stop_total(),
        k.overall.repaired.correct,
        k.overall.repaired.items,
        f.violations
    ))
}

fn cached_regression() -> Outcome {
    let suite = suite()?;
    let golden = common::fixtures().join("golden");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store_path = tmp.path().join("store.jsonl");
    std::fs::copy(golden.join("store.jsonl"), &store_path).map_err(|e| e.to_string())?;
    let store = Arc::new(ResponseStore::open(&store_path).map_err(|e| e.to_string())?);
    let source = CachedSource {
        store: store.clone(),
        delegate: None,
    };
    let golden_run = golden.join("cached-oracle");
    let cfg: RunConfig = parse_doc(&std::fs::read(golden_run.join("run.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let run_dir = tmp.path().join("cached-oracle");
    let report = run_e2e(&suite, &cfg, &source, &run_dir, 4).map_err(|e| e.to_string())?;
    ensure!(store.recorded() == 0, "store grew by {}", store.recorded());

    let mut files = 0;
    for sub in ["trajectories", "transcripts"] {
        for entry in std::fs::read_dir(golden_run.join(sub)).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            let name = path.file_name().unwrap();
            let want = std::fs::read(&path).map_err(|e| e.to_string())?;
            let got = std::fs::read(run_dir.join(sub).join(name)).map_err(|e| e.to_string())?;
            ensure!(want == got, "{sub}/{} differs", name.to_string_lossy());
            files += 1;
        }
    }
    let golden_json = std::fs::read(golden_run.join("report.json")).map_err(|e| e.to_string())?;
    let golden_digest = navbench_sha256(&golden_json);
    ensure!(report.digest() == golden_digest, "report digest {} != {golden_digest}", report.digest());
    Ok(format!("{files} trajectory and transcript files identical; report digest {}", &golden_digest[..16]))
}

fn navbench_sha256(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

fn center(screen: &UIScreen, index: u32) -> Option<Point> {
    let b = screen.interactable(index as usize)?.bounds;
    let cx = (i64::from(b.left) + i64::from(b.right)).div_euclid(2);
    let cy = (i64::from(b.top) + i64::from(b.bottom)).div_euclid(2);
    Some(Point::new(u32::try_from(cx).ok()?, u32::try_from(cy).ok()?))
}

/// The same action addressed by coordinates at the element's center.
fn by_coordinates(a: &Action, screen: &UIScreen) -> Option<Action> {
    const REACH: u32 = 80;
    Some(match a {
        Action::ClickElem(i) => Action::ClickXY(center(screen, *i)?),
        Action::LongClickElem(i) => Action::LongClickXY(center(screen, *i)?),
        Action::TextElem(i, s) => Action::TextXY(center(screen, *i)?, s.clone()),
        Action::SwipeElem(i, d) => {
            let from = center(screen, *i)?;
            let to = match d {
                Direction::Up => Point::new(from.x, from.y.saturating_sub(REACH)),
                Direction::Down => Point::new(from.x, from.y + REACH),
                Direction::Left => Point::new(from.x.saturating_sub(REACH), from.y),
                Direction::Right => Point::new(from.x + REACH, from.y),
            };
            Action::SwipeXYXY(from, to)
        }
        other => other.clone(),
    })
}

fn reference_fingerprints(t: &Trajectory, actions: usize) -> Vec<String> {
    (0..=actions).map(|i| fingerprint(t.screen_at(i))).collect()
}

fn replay_environment() -> Outcome {
    let suite = suite()?;
    let (mut tasks, mut converted) = (0, 0);
    for lt in &suite.tasks {
        let id = &lt.task.id;
        let utg = suite.utgs.get(&lt.task.app_id).ok_or(format!("{id}: no graph"))?;
        let actions: Vec<&Action> = lt
            .reference
            .steps
            .iter()
            .map(|s| s.parsed.as_ref().map_err(|f| format!("{id}: {f}")))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .filter(|a| !a.is_stop())
            .collect();
        ensure!(lt.reference.stop_reason == StopReason::AgentStop, "{id}: reference does not stop");
        let expected = reference_fingerprints(&lt.reference, actions.len());

        let mut by_elem = ReplayEnv::new(Arc::clone(utg), &suite.root, Default::default());
        let mut by_xy = ReplayEnv::new(Arc::clone(utg), &suite.root, Default::default());
        let mut seen = vec![by_elem.reset().map_err(|e| e.to_string())?.fingerprint];
        let start = by_xy.reset().map_err(|e| e.to_string())?;
        let mut screen = start.screen;
        for (k, a) in actions.iter().enumerate() {
            let xy = by_coordinates(a, &screen).ok_or(format!("{id} step {k}: no center for {a}"))?;
            converted += usize::from(xy != **a);
            ensure!(
                action_key(a, &screen) == action_key(&xy, &screen),
                "{id} step {k}: {a} and {xy} take different edges"
            );
            let e = by_elem.step(a).map_err(|e| e.to_string())?;
            let c = by_xy.step(&xy).map_err(|e| e.to_string())?;
            ensure!(e.transitioned && c.transitioned, "{id} step {k}: no recorded edge");
            ensure!(e.frame.fingerprint == c.frame.fingerprint, "{id} step {k}: {a} and {xy} diverge");
            seen.push(e.frame.fingerprint);
            screen = c.frame.screen;
        }
        ensure!(seen == expected, "{id}: replayed fingerprints differ from the recording");
        tasks += 1;
    }
    Ok(format!("{tasks} references reproduce their fingerprints; {converted} actions re-addressed by coordinates"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("oracle replay", oracle_replay),
        ("sabotaged oracle", sabotaged_oracle),
        ("evaluator vs brute-force oracle", evaluator_vs_brute_force),
        ("action grammar", grammar),
        ("observation serializers", serializer),
        ("metric definitions", metrics),
        ("probe scorers", probe_cases),
        ("cached-transcript regression", cached_regression),
        ("replay environment", replay_environment),
    ];
    // Failing criteria report through the lines below, not panic noise.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
