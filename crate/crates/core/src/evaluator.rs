//! Trajectory evaluators.
//!
//! An evaluator is an ordered list of nodes, each either an atomic assertion
//! or a nested evaluator, plus an order (`sequential`, `consecutive` or
//! `presence`). A trajectory with `n` steps has positions `0..=n`: position
//! `i < n` is the pair (screen `i`, action taken on it) and position `n` is the
//! final screen.
//!
//! Every node occupies *spans* `[start, end]` of positions. An assertion
//! occupies `[i, i]` for each position where it holds. A nested evaluator
//! occupies `[s, e]` when some satisfying assignment of its own nodes lies
//! within `[s, e]` and touches both ends. Ordering then constrains the spans
//! chosen for consecutive list nodes:
//!
//! * `presence`: no constraint.
//! * `sequential`: `end_k < start_{k+1}`.
//! * `consecutive`: `start_{k+1} = end_k + 1`.

use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::action::{Action, Direction, Key, Target, Verb};
use crate::model::{StopReason, Trajectory, UINode, UIScreen};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Exact,
    Contains,
    Regex,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawStringMatcher {
    mode: MatchMode,
    value: String,
}

/// A string predicate. `regex` mode searches anywhere in the subject; use
/// `^...$` to anchor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawStringMatcher", into = "RawStringMatcher")]
pub struct StringMatcher {
    pub mode: MatchMode,
    pub value: String,
    regex: Option<Regex>,
}

impl PartialEq for StringMatcher {
    fn eq(&self, other: &Self) -> bool {
        self.mode == other.mode && self.value == other.value
    }
}

impl TryFrom<RawStringMatcher> for StringMatcher {
    type Error = String;

    fn try_from(raw: RawStringMatcher) -> Result<Self, String> {
        StringMatcher::new(raw.mode, raw.value)
    }
}

impl From<StringMatcher> for RawStringMatcher {
    fn from(m: StringMatcher) -> Self {
        RawStringMatcher {
            mode: m.mode,
            value: m.value,
        }
    }
}

impl StringMatcher {
    pub fn new(mode: MatchMode, value: impl Into<String>) -> Result<Self, String> {
        let value = value.into();
        let regex = match mode {
            MatchMode::Regex => {
                Some(Regex::new(&value).map_err(|e| format!("invalid regex {value:?}: {e}"))?)
            }
            _ => None,
        };
        Ok(Self { mode, value, regex })
    }

    pub fn exact(value: impl Into<String>) -> Self {
        Self::new(MatchMode::Exact, value).expect("exact matchers always build")
    }

    pub fn contains(value: impl Into<String>) -> Self {
        Self::new(MatchMode::Contains, value).expect("contains matchers always build")
    }

    pub fn is_match(&self, subject: &str) -> bool {
        match self.mode {
            MatchMode::Exact => subject == self.value,
            MatchMode::Contains => subject.contains(&self.value),
            MatchMode::Regex => self
                .regex
                .as_ref()
                .is_some_and(|re| re.is_match(subject)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    ResourceId,
    Text,
    ContentDesc,
    ClassName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawClause {
    field: Field,
    #[serde(flatten)]
    matcher: StringMatcher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawClause", into = "RawClause")]
pub struct Clause {
    pub field: Field,
    pub matcher: StringMatcher,
}

impl TryFrom<RawClause> for Clause {
    type Error = String;

    fn try_from(raw: RawClause) -> Result<Self, String> {
        if raw.field == Field::ClassName && raw.matcher.mode != MatchMode::Exact {
            return Err("class_name only supports exact matching".into());
        }
        Ok(Clause {
            field: raw.field,
            matcher: raw.matcher,
        })
    }
}

impl From<Clause> for RawClause {
    fn from(c: Clause) -> Self {
        RawClause {
            field: c.field,
            matcher: c.matcher,
        }
    }
}

impl Clause {
    pub fn new(field: Field, matcher: StringMatcher) -> Self {
        Self { field, matcher }
    }

    fn is_match(&self, node: &UINode) -> bool {
        let subject = match self.field {
            Field::ResourceId => &node.resource_id,
            Field::Text => &node.text,
            Field::ContentDesc => &node.content_desc,
            Field::ClassName => &node.class_name,
        };
        self.matcher.is_match(subject)
    }
}

/// Conjunction of attribute clauses; never empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Clause>", into = "Vec<Clause>")]
pub struct ElementMatcher {
    clauses: Vec<Clause>,
}

impl TryFrom<Vec<Clause>> for ElementMatcher {
    type Error = String;

    fn try_from(clauses: Vec<Clause>) -> Result<Self, String> {
        ElementMatcher::new(clauses)
    }
}

impl From<ElementMatcher> for Vec<Clause> {
    fn from(m: ElementMatcher) -> Self {
        m.clauses
    }
}

impl ElementMatcher {
    pub fn new(clauses: Vec<Clause>) -> Result<Self, String> {
        if clauses.is_empty() {
            return Err("element matcher needs at least one clause".into());
        }
        Ok(Self { clauses })
    }

    pub fn single(field: Field, matcher: StringMatcher) -> Self {
        Self {
            clauses: vec![Clause::new(field, matcher)],
        }
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn is_match(&self, node: &UINode) -> bool {
        self.clauses.iter().all(|c| c.is_match(node))
    }

    /// Whether any node of the screen matches.
    pub fn matches_screen(&self, screen: &UIScreen) -> bool {
        screen
            .root
            .preorder()
            .into_iter()
            .any(|(_, n)| self.is_match(n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerbPattern {
    Click,
    #[serde(rename = "longclick")]
    LongClick,
    Text,
    Swipe,
    Press,
    Any,
}

impl VerbPattern {
    fn admits(&self, verb: Verb) -> bool {
        match self {
            VerbPattern::Any => true,
            VerbPattern::Click => verb == Verb::Click,
            VerbPattern::LongClick => verb == Verb::LongClick,
            VerbPattern::Text => verb == Verb::Text,
            VerbPattern::Swipe => verb == Verb::Swipe,
            VerbPattern::Press => verb == Verb::Press,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawActionPattern {
    verb: VerbPattern,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    key: Option<Key>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload: Option<StringMatcher>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<ElementMatcher>,
}

/// Predicate over an action taken on a given screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawActionPattern", into = "RawActionPattern")]
pub struct ActionPattern {
    pub verb: VerbPattern,
    pub key: Option<Key>,
    pub direction: Option<Direction>,
    pub payload: Option<StringMatcher>,
    pub target: Option<ElementMatcher>,
}

impl TryFrom<RawActionPattern> for ActionPattern {
    type Error = String;

    fn try_from(raw: RawActionPattern) -> Result<Self, String> {
        if raw.key.is_some() && raw.verb != VerbPattern::Press {
            return Err("key constraint requires verb \"press\"".into());
        }
        if raw.payload.is_some() && raw.verb != VerbPattern::Text {
            return Err("payload matcher requires verb \"text\"".into());
        }
        if raw.direction.is_some() && raw.verb != VerbPattern::Swipe {
            return Err("direction constraint requires verb \"swipe\"".into());
        }
        if raw.target.is_some() && raw.verb == VerbPattern::Press {
            return Err("press actions have no target element".into());
        }
        Ok(ActionPattern {
            verb: raw.verb,
            key: raw.key,
            direction: raw.direction,
            payload: raw.payload,
            target: raw.target,
        })
    }
}

impl From<ActionPattern> for RawActionPattern {
    fn from(p: ActionPattern) -> Self {
        RawActionPattern {
            verb: p.verb,
            key: p.key,
            direction: p.direction,
            payload: p.payload,
            target: p.target,
        }
    }
}

/// The element an action lands on: the indexed interactable for
/// element-addressed actions, the innermost interactable under the point for
/// coordinate actions (swipes use their start point).
pub fn resolve_target<'s>(action: &Action, screen: &'s UIScreen) -> Option<&'s UINode> {
    match action.target() {
        Target::Element(i) => screen.interactable(i as usize),
        Target::Point(p) => screen
            .hit_test(i64::from(p.x), i64::from(p.y))
            .map(|e| e.node),
        Target::None => None,
    }
}

impl ActionPattern {
    pub fn verb(verb: VerbPattern) -> Self {
        Self {
            verb,
            key: None,
            direction: None,
            payload: None,
            target: None,
        }
    }

    pub fn press(key: Key) -> Self {
        Self {
            key: Some(key),
            ..Self::verb(VerbPattern::Press)
        }
    }

    pub fn with_target(mut self, target: ElementMatcher) -> Self {
        self.target = Some(target);
        self
    }

    pub fn with_payload(mut self, payload: StringMatcher) -> Self {
        self.payload = Some(payload);
        self
    }

    pub fn is_match(&self, action: &Action, screen: &UIScreen) -> bool {
        if !self.verb.admits(action.verb()) {
            return false;
        }
        if let Some(k) = self.key {
            if action.key() != Some(k) {
                return false;
            }
        }
        if let Some(d) = self.direction {
            if action.direction() != Some(d) {
                return false;
            }
        }
        if let Some(m) = &self.payload {
            if !action.payload().is_some_and(|p| m.is_match(p)) {
                return false;
            }
        }
        if let Some(m) = &self.target {
            if !resolve_target(action, screen).is_some_and(|n| m.is_match(n)) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Assertion {
    /// The agent stopped on a screen containing a matching element.
    StopPage { element: ElementMatcher },
    /// The last executed action before the stop matches.
    LastAction { action: ActionPattern },
    FindAction { action: ActionPattern },
    FindElement { element: ElementMatcher },
    /// An action matches and lands on a matching element.
    FindElementByAction {
        element: ElementMatcher,
        action: ActionPattern,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    Sequential,
    Consecutive,
    Presence,
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Order::Sequential => "sequential",
            Order::Consecutive => "consecutive",
            Order::Presence => "presence",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNode", into = "RawNode")]
pub enum EvalNode {
    Assertion(Assertion),
    Evaluator(Evaluator),
}

/// Wire form of a list node: assertions and nested evaluators share one
/// `type` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum RawNode {
    StopPage {
        element: ElementMatcher,
    },
    LastAction {
        action: ActionPattern,
    },
    FindAction {
        action: ActionPattern,
    },
    FindElement {
        element: ElementMatcher,
    },
    FindElementByAction {
        element: ElementMatcher,
        action: ActionPattern,
    },
    Evaluator {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        order: Order,
        list: Vec<EvalNode>,
    },
}

impl TryFrom<RawNode> for EvalNode {
    type Error = String;

    fn try_from(raw: RawNode) -> Result<Self, String> {
        Ok(match raw {
            RawNode::StopPage { element } => Assertion::StopPage { element }.into(),
            RawNode::LastAction { action } => Assertion::LastAction { action }.into(),
            RawNode::FindAction { action } => Assertion::FindAction { action }.into(),
            RawNode::FindElement { element } => Assertion::FindElement { element }.into(),
            RawNode::FindElementByAction { element, action } => {
                Assertion::FindElementByAction { element, action }.into()
            }
            RawNode::Evaluator { id, order, list } => {
                EvalNode::Evaluator(Evaluator::try_from(RawEvaluator { id, order, list })?)
            }
        })
    }
}

impl From<EvalNode> for RawNode {
    fn from(node: EvalNode) -> Self {
        match node {
            EvalNode::Assertion(Assertion::StopPage { element }) => RawNode::StopPage { element },
            EvalNode::Assertion(Assertion::LastAction { action }) => RawNode::LastAction { action },
            EvalNode::Assertion(Assertion::FindAction { action }) => RawNode::FindAction { action },
            EvalNode::Assertion(Assertion::FindElement { element }) => {
                RawNode::FindElement { element }
            }
            EvalNode::Assertion(Assertion::FindElementByAction { element, action }) => {
                RawNode::FindElementByAction { element, action }
            }
            EvalNode::Evaluator(e) => RawNode::Evaluator {
                id: e.id,
                order: e.order,
                list: e.list,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawEvaluator {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    order: Order,
    list: Vec<EvalNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEvaluator", into = "RawEvaluator")]
pub struct Evaluator {
    pub id: Option<String>,
    pub order: Order,
    pub list: Vec<EvalNode>,
}

impl TryFrom<RawEvaluator> for Evaluator {
    type Error = String;

    fn try_from(raw: RawEvaluator) -> Result<Self, String> {
        if raw.list.is_empty() {
            return Err("evaluator list must not be empty".into());
        }
        Ok(Evaluator {
            id: raw.id,
            order: raw.order,
            list: raw.list,
        })
    }
}

impl From<Evaluator> for RawEvaluator {
    fn from(e: Evaluator) -> Self {
        RawEvaluator {
            id: e.id,
            order: e.order,
            list: e.list,
        }
    }
}

impl Evaluator {
    pub fn new(order: Order, list: Vec<EvalNode>) -> Self {
        assert!(!list.is_empty(), "evaluator list must not be empty");
        Self {
            id: None,
            order,
            list,
        }
    }

    pub fn depth(&self) -> usize {
        1 + self
            .list
            .iter()
            .map(|n| match n {
                EvalNode::Assertion(_) => 0,
                EvalNode::Evaluator(sub) => sub.depth(),
            })
            .max()
            .unwrap_or(0)
    }
}

impl From<Assertion> for EvalNode {
    fn from(a: Assertion) -> Self {
        EvalNode::Assertion(a)
    }
}

impl From<Evaluator> for EvalNode {
    fn from(e: Evaluator) -> Self {
        EvalNode::Evaluator(e)
    }
}

/// On-disk evaluator document (`evaluators/<id>.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluatorFile {
    #[serde(flatten)]
    pub evaluator: Evaluator,
}

// ---------------------------------------------------------------------------
// Matching

fn last_action_before_stop(t: &Trajectory) -> Option<(&Action, &UIScreen)> {
    t.steps.iter().rev().find_map(|s| {
        s.executed_action()
            .filter(|a| !a.is_stop())
            .map(|a| (a, &*s.screen))
    })
}

/// Positions at which an assertion holds, ascending.
///
/// `StopPage` and `LastAction` only hold at the final position, and only when
/// the agent ended the episode itself.
pub fn assertion_positions(a: &Assertion, t: &Trajectory) -> Vec<usize> {
    let n = t.len();
    let stopped = t.stop_reason == StopReason::AgentStop;
    match a {
        Assertion::StopPage { element } => {
            if stopped && element.matches_screen(&t.final_screen) {
                vec![n]
            } else {
                Vec::new()
            }
        }
        Assertion::LastAction { action } => match last_action_before_stop(t) {
            Some((act, screen)) if stopped && action.is_match(act, screen) => vec![n],
            _ => Vec::new(),
        },
        Assertion::FindAction { action } => t
            .steps
            .iter()
            .enumerate()
            .filter(|(_, s)| {
                s.executed_action()
                    .is_some_and(|a| action.is_match(a, &s.screen))
            })
            .map(|(i, _)| i)
            .collect(),
        Assertion::FindElement { element } => (0..=n)
            .filter(|&i| element.matches_screen(t.screen_at(i)))
            .collect(),
        Assertion::FindElementByAction { element, action } => t
            .steps
            .iter()
            .enumerate()
            .filter(|(_, s)| {
                s.executed_action().is_some_and(|a| {
                    action.is_match(a, &s.screen)
                        && resolve_target(a, &s.screen).is_some_and(|node| element.is_match(node))
                })
            })
            .map(|(i, _)| i)
            .collect(),
    }
}

/// Dense set of spans `[s, e]` over positions `0..=n`.
#[derive(Clone)]
struct SpanSet {
    size: usize,
    bits: Vec<bool>,
}

impl SpanSet {
    fn new(positions: usize) -> Self {
        Self {
            size: positions,
            bits: vec![false; positions * positions],
        }
    }

    fn insert(&mut self, s: usize, e: usize) {
        self.bits[s * self.size + e] = true;
    }

    fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(k, _)| (k / self.size, k % self.size))
    }

    fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }
}

fn node_spans(node: &EvalNode, t: &Trajectory) -> SpanSet {
    match node {
        EvalNode::Assertion(a) => {
            let mut set = SpanSet::new(t.len() + 1);
            for i in assertion_positions(a, t) {
                set.insert(i, i);
            }
            set
        }
        EvalNode::Evaluator(sub) => evaluator_spans(sub, t),
    }
}

/// All tight spans `[first start, last end]` of satisfying assignments.
fn evaluator_spans(e: &Evaluator, t: &Trajectory) -> SpanSet {
    let positions = t.len() + 1;
    let mut iter = e.list.iter();
    let first = iter.next().expect("evaluator list is non-empty");
    // State: (start, end) of the assignment chosen so far. For the ordered
    // modes `end` is the end of the last node, which is also the maximum.
    let mut state = node_spans(first, t);
    for node in iter {
        if state.is_empty() {
            break;
        }
        let spans: Vec<(usize, usize)> = node_spans(node, t).iter().collect();
        let mut next = SpanSet::new(positions);
        for (lo, hi) in state.iter() {
            for &(s, end) in &spans {
                match e.order {
                    Order::Presence => next.insert(lo.min(s), hi.max(end)),
                    Order::Sequential if s > hi => next.insert(lo, end),
                    Order::Consecutive if s == hi + 1 => next.insert(lo, end),
                    _ => {}
                }
            }
        }
        state = next;
    }
    state
}

/// Whether the trajectory satisfies the evaluator.
pub fn evaluate(e: &Evaluator, t: &Trajectory) -> bool {
    !evaluator_spans(e, t).is_empty()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Satisfaction {
    pub satisfied: usize,
    pub total: usize,
    pub pass: bool,
}

impl Satisfaction {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.satisfied as f64 / self.total as f64
        }
    }
}

/// Count top-level evaluators satisfied by `t`.
pub fn task_satisfaction(evaluators: &[Evaluator], t: &Trajectory) -> Satisfaction {
    let satisfied = evaluators.iter().filter(|e| evaluate(e, t)).count();
    Satisfaction {
        satisfied,
        total: evaluators.len(),
        pass: !evaluators.is_empty() && satisfied == evaluators.len(),
    }
}
