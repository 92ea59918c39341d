//! Small hand-built cases whose metric values are known by construction.

use std::collections::BTreeMap;

use navbench::action::Action;
use navbench::agent::monitor_stats;
use navbench::evaluator::{Assertion, Clause, ElementMatcher, EvalNode, Evaluator, Field, Order, StringMatcher};
use navbench::model::Trajectory;
use navbench::report::{score_run, TrajectoryOutcome};
use navbench::suite::{step_key, Category, LoadedTask, Task};
use navbench::testkit::{screen, TrajectoryBuilder};

pub fn shows(text: &str) -> Evaluator {
    let element = ElementMatcher::new(vec![Clause::new(Field::Text, StringMatcher::exact(text))]).unwrap();
    Evaluator::new(Order::Presence, vec![EvalNode::from(Assertion::FindElement { element })])
}

pub fn task(id: &str, category: Category, evaluators: Vec<Evaluator>) -> LoadedTask {
    LoadedTask {
        task: Task {
            id: id.into(),
            app_id: "app".into(),
            instruction: format!("do {id}"),
            category,
            reference_trajectory: format!("trajectories/{id}.jsonl"),
            evaluators: (1..=evaluators.len()).map(|k| format!("evaluators/{id}-{k}.json")).collect(),
        },
        file: format!("tasks/{id}.json"),
        evaluators,
        reference: ends_on("Done"),
    }
}

/// Click once, then stop on a screen titled `title`.
pub fn ends_on(title: &str) -> Trajectory {
    keyed(
        TrajectoryBuilder::new()
            .step(screen("Home", &["Go"]), Action::ClickElem(0))
            .stop(screen(title, &[])),
    )
}

/// Fill in replay keys the way a live episode records them.
pub fn keyed(mut t: Trajectory) -> Trajectory {
    for s in &mut t.steps {
        s.key = step_key(&s.parsed, &s.screen);
    }
    t
}

pub struct Definitional {
    pub sr: f64,
    pub acp_fraction: f64,
    pub repetition: f64,
    pub format_error: f64,
}

pub fn definitional_cases() -> Definitional {
    let tasks: Vec<LoadedTask> = ["t1", "t2", "t3"]
        .into_iter()
        .map(|id| task(id, Category::User, vec![shows("Done")]))
        .collect();
    let outcomes: BTreeMap<String, TrajectoryOutcome> = [("t1", "Done"), ("t2", "Home"), ("t3", "Done")]
        .into_iter()
        .map(|(id, end)| (id.to_string(), Ok(ends_on(end))))
        .collect();
    let sr = score_run(&tasks, &outcomes).overall.sr.unwrap();

    let four = task("t4", Category::User, ["A", "B", "C", "Nowhere"].map(shows).to_vec());
    let visit = keyed(
        TrajectoryBuilder::new()
            .step(screen("A", &["Next"]), Action::ClickElem(0))
            .step(screen("B", &["Next"]), Action::ClickElem(0))
            .stop(screen("C", &[])),
    );
    let outcomes = BTreeMap::from([("t4".to_string(), Ok(visit))]);
    let acp_fraction = score_run(&[four], &outcomes).tasks[0].acp_fraction;

    // click, the same click on the same screen, stop: one repeat in three.
    let repeat = keyed(
        TrajectoryBuilder::new()
            .step(screen("List", &["More"]), Action::ClickElem(0))
            .step(screen("List", &["More"]), Action::ClickElem(0))
            .stop(screen("List", &["More"])),
    );
    let repetition = monitor_stats(&repeat).repetition_rate().unwrap();

    // click, garbage, click, stop: one malformed output in four.
    let garbled = keyed(
        TrajectoryBuilder::new()
            .step(screen("Home", &["Go"]), Action::ClickElem(0))
            .malformed(screen("Next", &["Go"]), "I will tap Go")
            .step(screen("Next", &["Go"]), Action::ClickElem(0))
            .stop(screen("Last", &[])),
    );
    let format_error = monitor_stats(&garbled).format_error_rate().unwrap();

    Definitional {
        sr,
        acp_fraction,
        repetition,
        format_error,
    }
}
