//! Deterministic replay over a recorded UI transition graph.
//!
//! States are screen fingerprints; edges are keyed by a normalized
//! [`action_key`] so element-addressed and coordinate agents traverse the same
//! recording.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::action::{Action, Direction, Key, Target};
use crate::model::{Trajectory, UINode, UIScreen};

pub const MISS: &str = "miss";

/// Normalized identity of `a` performed on `screen`.
pub fn action_key(a: &Action, screen: &UIScreen) -> String {
    if let Action::Press(k) = a {
        return format!("press|{}", k.as_str());
    }
    let node = match a.target() {
        Target::Element(i) => screen.interactable(i as usize),
        Target::Point(p) => screen
            .hit_test(i64::from(p.x), i64::from(p.y))
            .map(|e| e.node),
        Target::None => None,
    };
    let Some(node) = node else {
        return MISS.to_string();
    };
    let mut key = format!("{}|{}", a.verb().as_str(), locator(node));
    if let Some(payload) = a.payload() {
        let digest = Sha256::digest(payload.as_bytes());
        key.push_str("|#");
        key.push_str(&hex::encode(&digest[..8]));
    }
    if matches!(a, Action::SwipeElem(..) | Action::SwipeXYXY(..)) {
        key.push('|');
        key.push_str(a.direction().map_or("none", |d: Direction| d.as_str()));
    }
    key
}

fn locator(node: &UINode) -> String {
    serde_json::to_string(&[&node.resource_id, &node.text, &node.content_desc])
        .expect("strings serialize")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoTransitionPolicy {
    #[default]
    Stay,
    Fail,
}

impl FromStr for NoTransitionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "stay" => Ok(Self::Stay),
            "fail" => Ok(Self::Fail),
            _ => Err(format!("unknown policy {s:?} (expected stay or fail)")),
        }
    }
}

impl fmt::Display for NoTransitionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Stay => "stay",
            Self::Fail => "fail",
        })
    }
}

/// Two recordings disagree on where one action leads.
#[derive(Debug, Error)]
#[error(
    "conflicting recordings for app {app}: state {state} with {key} leads to {first_to} in {first} but to {second_to} in {second}"
)]
pub struct Conflict {
    pub app: String,
    pub state: String,
    pub key: String,
    pub first: String,
    pub first_to: String,
    pub second: String,
    pub second_to: String,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("no recorded transition from state {state} for {key}")]
    NoTransition { state: String, key: String },
    #[error("{0}")]
    Conflict(Box<Conflict>),
    #[error("recordings for app {app} start from different screens: {first} and {second}")]
    InitialMismatch {
        app: String,
        first: String,
        second: String,
    },
    #[error("cannot read screenshot {path}: {source}")]
    Screenshot {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("device error: {0}")]
    Device(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub screen_ref: String,
    pub screen: Arc<UIScreen>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utg {
    pub app_id: String,
    pub initial: String,
    pub states: BTreeMap<String, State>,
    pub edges: BTreeMap<(String, String), String>,
}

/// On-disk form of a [`Utg`] (`utg/<app>.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtgFile {
    pub app_id: String,
    pub initial: String,
    /// Fingerprint to screen document path, relative to the suite root.
    pub states: BTreeMap<String, String>,
    pub edges: Vec<EdgeRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeRecord {
    pub from: String,
    pub key: String,
    pub to: String,
}

impl Utg {
    pub fn to_file(&self) -> UtgFile {
        UtgFile {
            app_id: self.app_id.clone(),
            initial: self.initial.clone(),
            states: self
                .states
                .iter()
                .map(|(fp, s)| (fp.clone(), s.screen_ref.clone()))
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|((from, key), to)| EdgeRecord {
                    from: from.clone(),
                    key: key.clone(),
                    to: to.clone(),
                })
                .collect(),
        }
    }

    pub fn successor(&self, state: &str, key: &str) -> Option<&str> {
        self.edges
            .get(&(state.to_string(), key.to_string()))
            .map(String::as_str)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

/// Union the transitions of several recordings of one app.
///
/// `recordings` pairs a name (used in conflict messages) with a trajectory.
/// Malformed, rejected, stop and restart steps contribute no edge.
pub fn build_utg(app_id: &str, recordings: &[(String, &Trajectory)]) -> Result<Utg, EnvError> {
    let mut states = BTreeMap::new();
    let mut edges: BTreeMap<(String, String), String> = BTreeMap::new();
    let mut origin: BTreeMap<(String, String), String> = BTreeMap::new();
    let mut initial: Option<(String, String)> = None;

    for (name, t) in recordings {
        let fps = t.fingerprints();
        match &initial {
            None => initial = Some((fps[0].clone(), name.clone())),
            Some((fp, first)) if *fp != fps[0] => {
                return Err(EnvError::InitialMismatch {
                    app: app_id.to_string(),
                    first: first.clone(),
                    second: name.clone(),
                })
            }
            Some(_) => {}
        }
        let visited = t
            .steps
            .iter()
            .map(|s| (&s.screen_ref, &s.screen))
            .chain([(&t.final_screen_ref, &t.final_screen)]);
        for (fp, (screen_ref, screen)) in fps.iter().zip(visited) {
            states.entry(fp.clone()).or_insert_with(|| State {
                screen_ref: screen_ref.clone(),
                screen: screen.clone(),
            });
        }
        for (i, step) in t.steps.iter().enumerate() {
            let Some(a) = step.executed_action() else {
                continue;
            };
            if matches!(a, Action::Press(Key::Stop | Key::Restart)) {
                continue;
            }
            let edge = (fps[i].clone(), action_key(a, &step.screen));
            let to = fps[i + 1].clone();
            let here = format!("{name} step {i}");
            match edges.get(&edge) {
                Some(prev) if *prev != to => {
                    return Err(EnvError::Conflict(Box::new(Conflict {
                        app: app_id.to_string(),
                        first: origin[&edge].clone(),
                        state: edge.0,
                        key: edge.1,
                        first_to: prev.clone(),
                        second: here,
                        second_to: to,
                    })))
                }
                Some(_) => {}
                None => {
                    origin.insert(edge.clone(), here);
                    edges.insert(edge, to);
                }
            }
        }
    }
    let (initial, _) = initial.unwrap_or_default();
    Ok(Utg {
        app_id: app_id.to_string(),
        initial,
        states,
        edges,
    })
}

/// What an environment shows after reset or a step.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub screen: Arc<UIScreen>,
    pub screen_ref: String,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub frame: Frame,
    pub transitioned: bool,
    pub key: String,
}

/// The interface an episode drives. [`ReplayEnv`] implements it over a
/// recording; a live device adapter would implement the same three calls.
pub trait Environment {
    fn reset(&mut self) -> Result<Frame, EnvError>;
    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError>;
    /// PNG bytes of the current screen, if the environment has them.
    fn screenshot(&self) -> Result<Option<Vec<u8>>, EnvError>;
}

pub struct ReplayEnv {
    utg: Arc<Utg>,
    root: PathBuf,
    policy: NoTransitionPolicy,
    current: String,
}

impl ReplayEnv {
    /// `root` resolves screenshot paths stored in screens.
    pub fn new(utg: Arc<Utg>, root: impl Into<PathBuf>, policy: NoTransitionPolicy) -> Self {
        let current = utg.initial.clone();
        Self {
            utg,
            root: root.into(),
            policy,
            current,
        }
    }

    pub fn current_fingerprint(&self) -> &str {
        &self.current
    }

    fn frame(&self) -> Frame {
        let state = &self.utg.states[&self.current];
        Frame {
            screen: state.screen.clone(),
            screen_ref: state.screen_ref.clone(),
            fingerprint: self.current.clone(),
        }
    }
}

impl Environment for ReplayEnv {
    fn reset(&mut self) -> Result<Frame, EnvError> {
        self.current = self.utg.initial.clone();
        Ok(self.frame())
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let screen = self.utg.states[&self.current].screen.clone();
        let key = action_key(action, &screen);
        if let Action::Press(Key::Restart) = action {
            let frame = self.reset()?;
            return Ok(StepResult {
                frame,
                transitioned: true,
                key,
            });
        }
        if let Some(next) = self.utg.successor(&self.current, &key) {
            self.current = next.to_string();
            return Ok(StepResult {
                frame: self.frame(),
                transitioned: true,
                key,
            });
        }
        // System keys never fail: an unrecorded back/home/wait/enter does nothing.
        if matches!(action, Action::Press(_)) || self.policy == NoTransitionPolicy::Stay {
            return Ok(StepResult {
                frame: self.frame(),
                transitioned: false,
                key,
            });
        }
        Err(EnvError::NoTransition {
            state: self.current.clone(),
            key,
        })
    }

    fn screenshot(&self) -> Result<Option<Vec<u8>>, EnvError> {
        let screen = &self.utg.states[&self.current].screen;
        match &screen.screenshot_ref {
            None => Ok(None),
            Some(rel) => {
                let path = self.root.join(rel);
                std::fs::read(&path)
                    .map(Some)
                    .map_err(|source| EnvError::Screenshot { path, source })
            }
        }
    }
}

/// Fingerprint sequence reached by replaying `actions` from reset.
pub fn replay_fingerprints(
    env: &mut dyn Environment,
    actions: &[&Action],
) -> Result<Vec<String>, EnvError> {
    let mut out = vec![env.reset()?.fingerprint];
    for a in actions {
        out.push(env.step(a)?.frame.fingerprint);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::Point;
    use crate::model::StopReason;
    use crate::testkit::{screen, TrajectoryBuilder};

    fn login_flow() -> Trajectory {
        TrajectoryBuilder::new()
            .step(screen("Home", &["Login", "Help"]), Action::ClickElem(0))
            .step(screen("Login", &["Submit"]), Action::ClickElem(0))
            .step(screen("Welcome", &["Logout"]), Action::Press(Key::Back))
            .stop(screen("Home", &["Login", "Help"]))
    }

    fn env_for(t: &Trajectory, policy: NoTransitionPolicy) -> ReplayEnv {
        let utg = build_utg("app", &[("t1".into(), t)]).unwrap();
        ReplayEnv::new(Arc::new(utg), ".", policy)
    }

    #[test]
    fn three_step_recording_counts() {
        let t = login_flow();
        let utg = build_utg("app", &[("t1".into(), &t)]).unwrap();
        assert_eq!(utg.states.len(), 3);
        assert_eq!(utg.edge_count(), 3);
        assert!(utg.states.contains_key(&utg.initial));
    }

    #[test]
    fn shared_prefix_deduplicates() {
        let a = login_flow();
        let b = TrajectoryBuilder::new()
            .step(screen("Home", &["Login", "Help"]), Action::ClickElem(1))
            .stop(screen("Help", &[]));
        let utg = build_utg("app", &[("a".into(), &a), ("b".into(), &b)]).unwrap();
        assert_eq!(utg.states.len(), 4);
        assert_eq!(utg.edge_count(), 4);
    }

    #[test]
    fn conflict_names_both_recordings() {
        let a = login_flow();
        let b = TrajectoryBuilder::new()
            .step(screen("Home", &["Login", "Help"]), Action::ClickElem(0))
            .stop(screen("Maintenance", &[]));
        let err = build_utg("app", &[("a.jsonl".into(), &a), ("b.jsonl".into(), &b)]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("a.jsonl") && msg.contains("b.jsonl"), "{msg}");
    }

    #[test]
    fn replay_and_policies() {
        let t = login_flow();
        let mut env = env_for(&t, NoTransitionPolicy::Stay);
        let start = env.reset().unwrap().fingerprint;
        let r = env.step(&Action::ClickElem(0)).unwrap();
        assert!(r.transitioned);
        assert_ne!(r.frame.fingerprint, start);
        // Unrecorded click stays put.
        let r2 = env.step(&Action::LongClickElem(0)).unwrap();
        assert!(!r2.transitioned);
        assert_eq!(r2.frame.fingerprint, r.frame.fingerprint);
        // Restart returns home.
        assert_eq!(
            env.step(&Action::Press(Key::Restart)).unwrap().frame.fingerprint,
            start
        );
        env.step(&Action::ClickElem(0)).unwrap();
        assert_eq!(env.reset().unwrap().fingerprint, start);

        let mut strict = env_for(&t, NoTransitionPolicy::Fail);
        strict.reset().unwrap();
        assert!(matches!(
            strict.step(&Action::ClickElem(1)),
            Err(EnvError::NoTransition { .. })
        ));
        assert!(!strict.step(&Action::Press(Key::Wait)).unwrap().transitioned);
    }

    #[test]
    fn coordinate_click_matches_element_click() {
        let t = login_flow();
        let home = screen("Home", &["Login", "Help"]);
        let (cx, cy) = home.interactable(0).unwrap().bounds.center();
        let xy = Action::ClickXY(Point::new(cx as u32, cy as u32));
        assert_eq!(action_key(&xy, &home), action_key(&Action::ClickElem(0), &home));
        let mut env = env_for(&t, NoTransitionPolicy::Fail);
        env.reset().unwrap();
        assert!(env.step(&xy).unwrap().transitioned);
    }

    #[test]
    fn keys() {
        let home = screen("Home", &["Login"]);
        assert_eq!(action_key(&Action::Press(Key::Back), &home), "press|back");
        assert_eq!(
            action_key(&Action::ClickElem(0), &home),
            r#"click|["app:id/login","Login",""]"#
        );
        assert_eq!(action_key(&Action::ClickElem(9), &home), MISS);
        assert_eq!(
            action_key(&Action::ClickXY(Point::new(5, 5)), &home),
            MISS,
            "title row is not interactable"
        );
        let typed = action_key(&Action::TextElem(0, "a".into()), &home);
        assert!(typed.starts_with("text|") && typed.contains("|#"));
        assert_ne!(typed, action_key(&Action::TextElem(0, "b".into()), &home));
        assert!(action_key(&Action::SwipeElem(0, Direction::Up), &home).ends_with("|up"));
    }

    #[test]
    fn malformed_and_rejected_steps_add_no_edges() {
        let t = TrajectoryBuilder::new()
            .malformed(screen("Home", &["Go"]), "tap [0]")
            .step(screen("Home", &["Go"]), Action::ClickElem(0))
            .finish(screen("Next", &[]), StopReason::StepLimit);
        let utg = build_utg("app", &[("t".into(), &t)]).unwrap();
        assert_eq!(utg.edge_count(), 1);
    }
}
