//! Brute-force reference for evaluator semantics over a toy app model.
//!
//! Instances are described with plain data (`Run`, `Tree`), judged here by
//! enumerating every assignment of spans, and separately lowered to library
//! types for the engine under test.

use std::collections::BTreeSet;

use navbench::action::{Action, Key, ValidationFailure};
use navbench::evaluator::{
    ActionPattern, Assertion, Clause, ElementMatcher, EvalNode, Evaluator, Field, Order,
    StringMatcher, VerbPattern,
};
use navbench::model::{StopReason, Trajectory};
use navbench::testkit::{screen, TrajectoryBuilder};
use proptest::prelude::RngExt;
use proptest::test_runner::TestRng;

pub const TITLES: [&str; 3] = ["Home", "List", "Detail"];
pub const BUTTONS: [&str; 3] = ["Open", "Save", "Back"];

#[derive(Debug, Clone, PartialEq)]
pub struct Page {
    pub title: &'static str,
    pub buttons: Vec<&'static str>,
}

impl Page {
    fn shows(&self, text: &str) -> bool {
        self.title == text || self.buttons.contains(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Move {
    Click(u32),
    Type(u32),
    Back,
    Enter,
    Stop,
    Garbled,
}

#[derive(Debug, Clone)]
pub struct Run {
    /// When `stopped`, the last step is `(last, Stop)`.
    pub steps: Vec<(Page, Move)>,
    pub last: Page,
    pub stopped: bool,
}

#[derive(Debug, Clone, Copy)]
pub enum Pat {
    Click,
    Type,
    Press,
    Any,
    Key(Key),
    ClickOn(&'static str),
}

#[derive(Debug, Clone)]
pub enum Atom {
    FindElement(&'static str),
    FindAction(Pat),
    ByAction(&'static str, Pat),
    StopPage(&'static str),
    LastAction(Pat),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ord3 {
    Sequential,
    Consecutive,
    Presence,
}

#[derive(Debug, Clone)]
pub enum Tree {
    Atom(Atom),
    List(Ord3, Vec<Tree>),
}

impl Tree {
    pub fn depth(&self) -> usize {
        match self {
            Tree::Atom(_) => 0,
            Tree::List(_, items) => 1 + items.iter().map(Tree::depth).max().unwrap_or(0),
        }
    }
}

// ---------------------------------------------------------------------------
// Reference semantics

/// The element a move lands on, if it was executed and aims at one.
fn landed_on(page: &Page, mv: Move) -> Option<&'static str> {
    match mv {
        Move::Click(i) | Move::Type(i) => page.buttons.get(i as usize).copied(),
        _ => None,
    }
}

/// Executed means parsed and not refused for an out-of-range index.
fn executed(page: &Page, mv: Move) -> bool {
    match mv {
        Move::Garbled => false,
        Move::Click(i) | Move::Type(i) => (i as usize) < page.buttons.len(),
        _ => true,
    }
}

fn pat_matches(p: Pat, page: &Page, mv: Move) -> bool {
    if !executed(page, mv) {
        return false;
    }
    match p {
        Pat::Click => matches!(mv, Move::Click(_)),
        Pat::Type => matches!(mv, Move::Type(_)),
        Pat::Press => matches!(mv, Move::Back | Move::Enter | Move::Stop),
        Pat::Any => true,
        Pat::Key(Key::Back) => mv == Move::Back,
        Pat::Key(Key::Enter) => mv == Move::Enter,
        Pat::Key(Key::Stop) => mv == Move::Stop,
        Pat::Key(_) => false,
        Pat::ClickOn(text) => matches!(mv, Move::Click(_)) && landed_on(page, mv) == Some(text),
    }
}

pub fn positions(atom: &Atom, run: &Run) -> Vec<usize> {
    let n = run.steps.len();
    let page_at = |i: usize| if i < n { &run.steps[i].0 } else { &run.last };
    match atom {
        Atom::FindElement(text) => (0..=n).filter(|&i| page_at(i).shows(text)).collect(),
        Atom::FindAction(p) => (0..n)
            .filter(|&i| pat_matches(*p, &run.steps[i].0, run.steps[i].1))
            .collect(),
        Atom::ByAction(text, p) => (0..n)
            .filter(|&i| {
                let (page, mv) = (&run.steps[i].0, run.steps[i].1);
                pat_matches(*p, page, mv) && landed_on(page, mv) == Some(text)
            })
            .collect(),
        Atom::StopPage(text) => {
            if run.stopped && run.last.shows(text) {
                vec![n]
            } else {
                vec![]
            }
        }
        Atom::LastAction(p) => {
            let last = run
                .steps
                .iter()
                .rev()
                .find(|(page, mv)| *mv != Move::Stop && executed(page, *mv));
            match last {
                Some((page, mv)) if run.stopped && pat_matches(*p, page, *mv) => vec![n],
                _ => vec![],
            }
        }
    }
}

/// Every span `[s, e]` the node can occupy, by exhaustive enumeration.
pub fn spans(tree: &Tree, run: &Run) -> BTreeSet<(usize, usize)> {
    match tree {
        Tree::Atom(a) => positions(a, run).into_iter().map(|i| (i, i)).collect(),
        Tree::List(order, items) => {
            let options: Vec<Vec<(usize, usize)>> =
                items.iter().map(|t| spans(t, run).into_iter().collect()).collect();
            let mut out = BTreeSet::new();
            let mut chosen = Vec::with_capacity(items.len());
            enumerate(&options, *order, &mut chosen, &mut out);
            out
        }
    }
}

fn enumerate(
    options: &[Vec<(usize, usize)>],
    order: Ord3,
    chosen: &mut Vec<(usize, usize)>,
    out: &mut BTreeSet<(usize, usize)>,
) {
    if chosen.len() == options.len() {
        let ok = chosen.windows(2).all(|w| match order {
            Ord3::Presence => true,
            Ord3::Sequential => w[0].1 < w[1].0,
            Ord3::Consecutive => w[1].0 == w[0].1 + 1,
        });
        if ok {
            let s = chosen.iter().map(|c| c.0).min().unwrap();
            let e = chosen.iter().map(|c| c.1).max().unwrap();
            out.insert((s, e));
        }
        return;
    }
    for &span in &options[chosen.len()] {
        chosen.push(span);
        enumerate(options, order, chosen, out);
        chosen.pop();
    }
}

pub fn holds(tree: &Tree, run: &Run) -> bool {
    !spans(tree, run).is_empty()
}

// ---------------------------------------------------------------------------
// Lowering to library types

fn text_is(text: &str) -> ElementMatcher {
    ElementMatcher::new(vec![Clause::new(Field::Text, StringMatcher::exact(text))]).unwrap()
}

pub fn lower_pattern(p: Pat) -> ActionPattern {
    match p {
        Pat::Click => ActionPattern::verb(VerbPattern::Click),
        Pat::Type => ActionPattern::verb(VerbPattern::Text),
        Pat::Press => ActionPattern::verb(VerbPattern::Press),
        Pat::Any => ActionPattern::verb(VerbPattern::Any),
        Pat::Key(k) => ActionPattern::press(k),
        Pat::ClickOn(text) => ActionPattern::verb(VerbPattern::Click).with_target(text_is(text)),
    }
}

pub fn lower_atom(a: &Atom) -> Assertion {
    match a {
        Atom::FindElement(t) => Assertion::FindElement { element: text_is(t) },
        Atom::FindAction(p) => Assertion::FindAction {
            action: lower_pattern(*p),
        },
        Atom::ByAction(t, p) => Assertion::FindElementByAction {
            element: text_is(t),
            action: lower_pattern(*p),
        },
        Atom::StopPage(t) => Assertion::StopPage { element: text_is(t) },
        Atom::LastAction(p) => Assertion::LastAction {
            action: lower_pattern(*p),
        },
    }
}

fn lower_node(tree: &Tree) -> EvalNode {
    match tree {
        Tree::Atom(a) => EvalNode::from(lower_atom(a)),
        Tree::List(..) => EvalNode::from(lower_tree(tree)),
    }
}

/// Top-level trees must be lists.
pub fn lower_tree(tree: &Tree) -> Evaluator {
    let Tree::List(order, items) = tree else {
        panic!("an evaluator is a list");
    };
    let order = match order {
        Ord3::Sequential => Order::Sequential,
        Ord3::Consecutive => Order::Consecutive,
        Ord3::Presence => Order::Presence,
    };
    Evaluator::new(order, items.iter().map(lower_node).collect())
}

pub fn lower_run(run: &Run) -> Trajectory {
    let mut b = TrajectoryBuilder::new();
    let mut rejected = Vec::new();
    for (k, (page, mv)) in run.steps.iter().enumerate() {
        let s = screen(page.title, &page.buttons);
        b = match *mv {
            Move::Click(i) => b.step(s, Action::ClickElem(i)),
            Move::Type(i) => b.step(s, Action::TextElem(i, "hello".into())),
            Move::Back => b.step(s, Action::Press(Key::Back)),
            Move::Enter => b.step(s, Action::Press(Key::Enter)),
            Move::Garbled => b.malformed(s, "tap the blue button"),
            Move::Stop => break,
        };
        if matches!(mv, Move::Click(_) | Move::Type(_)) && !executed(page, *mv) {
            rejected.push(k);
        }
    }
    let last = screen(run.last.title, &run.last.buttons);
    let mut t = if run.stopped {
        b.stop(last)
    } else {
        b.finish(last, StopReason::StepLimit)
    };
    for k in rejected {
        t.steps[k].rejected = Some(ValidationFailure::IndexOutOfRange);
    }
    t
}

// ---------------------------------------------------------------------------
// Random instances

fn pick<T: Copy>(rng: &mut TestRng, xs: &[T]) -> T {
    xs[rng.random_range(0..xs.len())]
}

fn page(rng: &mut TestRng) -> Page {
    let mut buttons = Vec::new();
    for b in BUTTONS {
        if rng.random_bool(0.6) {
            buttons.push(b);
        }
    }
    if rng.random_bool(0.5) {
        buttons.reverse();
    }
    Page {
        title: pick(rng, &TITLES),
        buttons,
    }
}

/// A trajectory of at most `max_steps` steps, stop step included.
pub fn random_run(rng: &mut TestRng, max_steps: usize) -> Run {
    let stopped = rng.random_bool(0.6);
    let body = rng.random_range(0..=max_steps - usize::from(stopped));
    let mut steps = Vec::new();
    for _ in 0..body {
        let p = page(rng);
        let mv = match rng.random_range(0..10) {
            0..=4 => Move::Click(rng.random_range(0..4)),
            5 => Move::Type(rng.random_range(0..4)),
            6 => Move::Back,
            7 => Move::Enter,
            _ => Move::Garbled,
        };
        steps.push((p, mv));
    }
    let last = page(rng);
    if stopped {
        steps.push((last.clone(), Move::Stop));
    }
    Run {
        steps,
        last,
        stopped,
    }
}

/// Usually a text the run actually shows, so that both outcomes are common.
fn text(rng: &mut TestRng, run: &Run) -> &'static str {
    let shown: Vec<&'static str> = run
        .steps
        .iter()
        .map(|(p, _)| p)
        .chain([&run.last])
        .flat_map(|p| p.buttons.iter().copied().chain([p.title]))
        .collect();
    match rng.random_range(0..8) {
        0..=4 => pick(rng, &shown),
        5 => pick(rng, &TITLES),
        6 => pick(rng, &BUTTONS),
        _ => "Nowhere",
    }
}

fn pattern(rng: &mut TestRng) -> Pat {
    match rng.random_range(0..7) {
        0 => Pat::Click,
        1 => Pat::Type,
        2 => Pat::Press,
        3 => Pat::Any,
        4 => Pat::Key(pick(rng, &[Key::Back, Key::Enter, Key::Stop, Key::Home])),
        _ => Pat::ClickOn(pick(rng, &BUTTONS)),
    }
}

fn atom(rng: &mut TestRng, run: &Run) -> Atom {
    match rng.random_range(0..10) {
        0..=3 => Atom::FindElement(text(rng, run)),
        4 | 5 => Atom::FindAction(pattern(rng)),
        6 => Atom::ByAction(pick(rng, &BUTTONS), pick(rng, &[Pat::Click, Pat::Type, Pat::Any])),
        7 | 8 => Atom::StopPage(text(rng, run)),
        _ => Atom::LastAction(pattern(rng)),
    }
}

/// A list node of depth at most `depth` with 1 to `width` children each,
/// drawing texts mostly from `run`.
pub fn random_tree(rng: &mut TestRng, run: &Run, depth: usize, width: usize) -> Tree {
    let order = pick(rng, &[Ord3::Sequential, Ord3::Consecutive, Ord3::Presence]);
    let n = rng.random_range(1..=width);
    let items = (0..n)
        .map(|_| {
            if depth > 1 && rng.random_bool(0.3) {
                random_tree(rng, run, depth - 1, width)
            } else {
                Tree::Atom(atom(rng, run))
            }
        })
        .collect();
    Tree::List(order, items)
}

/// Every atom in a tree, in order.
pub fn atoms(tree: &Tree) -> Vec<&Atom> {
    match tree {
        Tree::Atom(a) => vec![a],
        Tree::List(_, items) => items.iter().flat_map(atoms).collect(),
    }
}
