//! On-disk suite layout and trajectory files.
//!
//! ```text
//! manifest.json
//! tasks/<id>.json
//! evaluators/<id>.json
//! trajectories/<id>.jsonl
//! screens/*.json
//! screenshots/*.png
//! utg/<app>.json
//! probes/{knowledge,completion,grounding,focused}.jsonl
//! ```
//!
//! Every document (and every JSONL line) carries `"format_version": 1`. All
//! references are paths relative to the suite root.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::action::{parse_action, render_action, Action, FormatFailure, FormatReason, Key, ValidationFailure};
use crate::env::{action_key, EdgeRecord, State, Utg, UtgFile};
use crate::error::{LoadError, SchemaError};
use crate::evaluator::{task_satisfaction, Evaluator, EvaluatorFile};
use crate::model::{fingerprint, load_screen, StopReason, Step, Trajectory, UIScreen, FORMAT_VERSION};
use crate::probes::{focused_example, CompletionItem, FocusedItem, GroundingItem, KnowledgeItem, Label};

// ---------------------------------------------------------------------------
// Generic document IO

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    format_version: u64,
    #[serde(flatten)]
    inner: &'a T,
}

/// Serialize `value` as one compact JSON line with the format version first.
pub fn to_versioned_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(&Versioned {
        format_version: FORMAT_VERSION,
        inner: value,
    })
    .expect("document serializes")
}

/// Pretty document with the format version first and a trailing newline.
pub fn to_versioned_pretty<T: Serialize>(value: &T) -> String {
    let mut out = serde_json::to_string_pretty(&Versioned {
        format_version: FORMAT_VERSION,
        inner: value,
    })
    .expect("document serializes");
    out.push('\n');
    out
}

fn check_version(doc: &mut Value, prefix: &str) -> Result<(), SchemaError> {
    let at = |field: &str| {
        if prefix.is_empty() {
            field.to_string()
        } else {
            format!("{prefix}.{field}")
        }
    };
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| SchemaError::new(if prefix.is_empty() { "$" } else { prefix }, "expected a JSON object"))?;
    match obj.remove("format_version") {
        Some(v) if v.as_u64() == Some(FORMAT_VERSION) => Ok(()),
        Some(v) => Err(SchemaError::new(
            at("format_version"),
            format!("unsupported version {v}, expected {FORMAT_VERSION}"),
        )),
        None => Err(SchemaError::new(at("format_version"), "missing required field")),
    }
}

fn from_value<T: DeserializeOwned>(doc: Value, prefix: &str) -> Result<T, SchemaError> {
    serde_path_to_error::deserialize(doc).map_err(|e| {
        let mut err = SchemaError::from(e);
        if !prefix.is_empty() {
            err.path = if err.path == "$" {
                prefix.to_string()
            } else {
                format!("{prefix}.{}", err.path)
            };
        }
        err
    })
}

/// Parse a versioned JSON document.
pub fn parse_doc<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, SchemaError> {
    let mut doc: Value = serde_json::from_slice(bytes)
        .map_err(|e| SchemaError::new("$", format!("invalid JSON: {e}")))?;
    check_version(&mut doc, "")?;
    from_value(doc, "")
}

/// Parse versioned JSON lines; blank lines are skipped, paths are `line N`.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, SchemaError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let prefix = format!("line {}", i + 1);
        let mut doc: Value = serde_json::from_str(line)
            .map_err(|e| SchemaError::new(&prefix, format!("invalid JSON: {e}")))?;
        check_version(&mut doc, &prefix)?;
        out.push(from_value(doc, &prefix)?);
    }
    Ok(out)
}

fn read_bytes(path: &Path, from: Option<&Path>) -> Result<Vec<u8>, LoadError> {
    std::fs::read(path).map_err(|source| match (source.kind(), from) {
        (std::io::ErrorKind::NotFound, Some(from)) => LoadError::DanglingRef {
            from: from.to_path_buf(),
            target: path.to_path_buf(),
        },
        _ => LoadError::io(path, source),
    })
}

pub fn read_doc<T: DeserializeOwned>(path: &Path, from: Option<&Path>) -> Result<T, LoadError> {
    let bytes = read_bytes(path, from)?;
    parse_doc(&bytes).map_err(|e| e.in_file(path).into())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, from: Option<&Path>) -> Result<Vec<T>, LoadError> {
    let bytes = read_bytes(path, from)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| SchemaError::new("$", "file is not UTF-8").in_file(path))?;
    parse_jsonl(&text).map_err(|e| e.in_file(path).into())
}

fn check_relative(reference: &str, at: &str) -> Result<(), SchemaError> {
    let p = Path::new(reference);
    if reference.is_empty()
        || p.is_absolute()
        || p.components().any(|c| matches!(c, std::path::Component::ParentDir))
    {
        return Err(SchemaError::new(at, format!("{reference:?} must be a relative path inside the suite")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Screens

/// Loads screen documents relative to a root directory, caching by path.
#[derive(Debug)]
pub struct ScreenStore {
    root: PathBuf,
    cache: Mutex<HashMap<String, Arc<UIScreen>>>,
}

impl ScreenStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Load `reference`; `from` names the document that points at it.
    pub fn load(&self, reference: &str, from: &Path) -> Result<Arc<UIScreen>, LoadError> {
        if let Some(hit) = self.cache.lock().expect("screen cache poisoned").get(reference) {
            return Ok(hit.clone());
        }
        let path = self.root.join(reference);
        let bytes = read_bytes(&path, Some(from))?;
        let screen = load_screen(&bytes).map_err(|e| e.in_file(&path))?;
        if let Some(shot) = &screen.screenshot_ref {
            check_relative(shot, "screenshot").map_err(|e| e.in_file(&path))?;
            let shot_path = self.root.join(shot);
            if !shot_path.is_file() {
                return Err(LoadError::DanglingRef {
                    from: path,
                    target: shot_path,
                });
            }
        }
        let screen = Arc::new(screen);
        self.cache
            .lock()
            .expect("screen cache poisoned")
            .insert(reference.to_string(), screen.clone());
        Ok(screen)
    }

    pub fn read_screenshot(&self, screen: &UIScreen) -> Result<Option<Vec<u8>>, LoadError> {
        match &screen.screenshot_ref {
            None => Ok(None),
            Some(rel) => {
                let path = self.root.join(rel);
                std::fs::read(&path).map(Some).map_err(|e| LoadError::io(path, e))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Trajectory files

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Record {
    Step {
        index: usize,
        screen: String,
        raw_output: String,
        action: Option<String>,
        #[serde(default)]
        format_error: Option<FormatReason>,
        #[serde(default)]
        validation_error: Option<ValidationFailure>,
        #[serde(default)]
        key: Option<String>,
    },
    End {
        final_screen: String,
        stop_reason: StopReason,
    },
}

/// The replay key recorded for a step: empty for malformed output.
pub fn step_key(parsed: &Result<Action, FormatFailure>, screen: &UIScreen) -> String {
    match parsed {
        Ok(a) => action_key(a, screen),
        Err(_) => String::new(),
    }
}

/// One JSON line per step plus a closing `end` line.
pub fn write_trajectory(t: &Trajectory) -> String {
    let mut out = String::new();
    for (index, s) in t.steps.iter().enumerate() {
        let record = Record::Step {
            index,
            screen: s.screen_ref.clone(),
            raw_output: s.raw_output.clone(),
            action: s.parsed.as_ref().ok().map(render_action),
            format_error: s.parsed.as_ref().err().map(|f| f.reason),
            validation_error: s.rejected,
            key: Some(s.key.clone()),
        };
        out.push_str(&to_versioned_line(&record));
        out.push('\n');
    }
    out.push_str(&to_versioned_line(&Record::End {
        final_screen: t.final_screen_ref.clone(),
        stop_reason: t.stop_reason,
    }));
    out.push('\n');
    out
}

/// Parse a trajectory file; screens are resolved through `store`.
pub fn parse_trajectory(text: &str, file: &Path, store: &ScreenStore) -> Result<Trajectory, LoadError> {
    let records: Vec<Record> = parse_jsonl(text).map_err(|e| e.in_file(file))?;
    let err = |path: String, msg: &str| LoadError::from(SchemaError::new(path, msg).in_file(file));
    let mut steps = Vec::new();
    let mut end = None;
    for (i, record) in records.into_iter().enumerate() {
        let at = format!("line {}", i + 1);
        if end.is_some() {
            return Err(err(at, "record after the end record"));
        }
        match record {
            Record::Step {
                index,
                screen,
                raw_output,
                action,
                format_error,
                validation_error,
                key,
            } => {
                if index != steps.len() {
                    return Err(err(format!("{at}.index"), &format!("expected {}", steps.len())));
                }
                check_relative(&screen, &format!("{at}.screen")).map_err(|e| e.in_file(file))?;
                let parsed = match (action, format_error) {
                    (Some(text), None) => Ok(parse_action(&text).map_err(|f| {
                        err(format!("{at}.action"), &format!("not a valid action: {}", f.reason.as_str()))
                    })?),
                    (None, Some(reason)) => Err(FormatFailure {
                        raw: raw_output.clone(),
                        reason,
                    }),
                    _ => {
                        return Err(err(at, "exactly one of action and format_error must be set"));
                    }
                };
                if validation_error.is_some() && parsed.is_err() {
                    return Err(err(format!("{at}.validation_error"), "set on a malformed step"));
                }
                let screen_doc = store.load(&screen, file)?;
                let expected = step_key(&parsed, &screen_doc);
                if let Some(k) = key {
                    if k != expected {
                        return Err(err(format!("{at}.key"), &format!("recorded key {k:?} differs from {expected:?}")));
                    }
                }
                steps.push(Step {
                    screen: screen_doc,
                    screen_ref: screen,
                    raw_output,
                    parsed,
                    rejected: validation_error,
                    key: expected,
                });
            }
            Record::End {
                final_screen,
                stop_reason,
            } => {
                check_relative(&final_screen, &format!("{at}.final_screen")).map_err(|e| e.in_file(file))?;
                end = Some((store.load(&final_screen, file)?, final_screen, stop_reason));
            }
        }
    }
    let Some((final_screen, final_screen_ref, stop_reason)) = end else {
        return Err(err("$".into(), "missing end record"));
    };
    if stop_reason == StopReason::AgentStop {
        let last = steps.last().and_then(Step::executed_action);
        if !matches!(last, Some(Action::Press(Key::Stop))) {
            return Err(err("$".into(), "agent_stop trajectory must end with press [stop]"));
        }
    }
    Ok(Trajectory {
        steps,
        final_screen,
        final_screen_ref,
        stop_reason,
    })
}

pub fn read_trajectory(path: &Path, from: Option<&Path>, store: &ScreenStore) -> Result<Trajectory, LoadError> {
    let bytes = read_bytes(path, from)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| SchemaError::new("$", "file is not UTF-8").in_file(path))?;
    parse_trajectory(&text, path, store)
}

// ---------------------------------------------------------------------------
// Manifest and tasks

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    pub tasks: Vec<String>,
    #[serde(default)]
    pub apps: BTreeMap<String, String>,
    #[serde(default)]
    pub probes: ProbeRefs,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeRefs {
    pub knowledge: Option<String>,
    pub completion: Option<String>,
    pub grounding: Option<String>,
    pub focused: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    User,
    Testing,
}

impl Category {
    pub fn as_str(&self) -> &'static str {
        match self {
            Category::User => "user",
            Category::Testing => "testing",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub id: String,
    pub app_id: String,
    pub instruction: String,
    pub category: Category,
    pub reference_trajectory: String,
    pub evaluators: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct LoadedTask {
    pub task: Task,
    pub file: String,
    pub evaluators: Vec<Evaluator>,
    pub reference: Trajectory,
}

#[derive(Debug, Clone, Default)]
pub struct ProbeSet {
    pub knowledge: Option<Vec<KnowledgeItem>>,
    pub completion: Option<Vec<CompletionItem>>,
    pub grounding: Option<Vec<GroundingItem>>,
    pub focused: Option<Vec<FocusedItem>>,
}

#[derive(Debug)]
pub struct Suite {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub tasks: Vec<LoadedTask>,
    pub utgs: BTreeMap<String, Arc<Utg>>,
    pub probes: ProbeSet,
    pub screens: ScreenStore,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Load `utg/*.json`. Disabled when the graphs are about to be rebuilt.
    pub utgs: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { utgs: true }
    }
}

impl Suite {
    pub fn task(&self, id: &str) -> Option<&LoadedTask> {
        self.tasks.iter().find(|t| t.task.id == id)
    }

    pub fn app_ids(&self) -> BTreeSet<&str> {
        self.tasks.iter().map(|t| t.task.app_id.as_str()).collect()
    }
}

pub fn load_suite(root: impl AsRef<Path>) -> Result<Suite, LoadError> {
    load_suite_with(root, LoadOptions::default())
}

pub fn load_suite_with(root: impl AsRef<Path>, opts: LoadOptions) -> Result<Suite, LoadError> {
    let root = root.as_ref().to_path_buf();
    let manifest_path = root.join("manifest.json");
    if !manifest_path.is_file() {
        return Err(SchemaError::new("$", "missing manifest.json").in_file(&manifest_path).into());
    }
    let manifest: Manifest = read_doc(&manifest_path, None)?;
    let in_manifest = |e: SchemaError| LoadError::from(e.in_file(&manifest_path));
    if manifest.version.trim().is_empty() {
        return Err(in_manifest(SchemaError::new("version", "must not be empty")));
    }
    let screens = ScreenStore::new(&root);

    let mut tasks = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, rel) in manifest.tasks.iter().enumerate() {
        check_relative(rel, &format!("tasks[{i}]")).map_err(in_manifest)?;
        let path = root.join(rel);
        let task: Task = read_doc(&path, Some(&manifest_path))?;
        let in_task = |e: SchemaError| LoadError::from(e.in_file(&path));
        if !seen.insert(task.id.clone()) {
            return Err(in_task(SchemaError::new("id", format!("duplicate task id {:?}", task.id))));
        }
        if !manifest.apps.is_empty() && !manifest.apps.contains_key(&task.app_id) {
            return Err(in_task(SchemaError::new("app_id", format!("app {:?} is not listed in the manifest", task.app_id))));
        }
        if task.evaluators.is_empty() {
            return Err(in_task(SchemaError::new("evaluators", "at least one evaluator is required")));
        }
        let mut evaluators = Vec::new();
        for (j, e) in task.evaluators.iter().enumerate() {
            check_relative(e, &format!("evaluators[{j}]")).map_err(in_task)?;
            let file: EvaluatorFile = read_doc(&root.join(e), Some(&path))?;
            evaluators.push(file.evaluator);
        }
        check_relative(&task.reference_trajectory, "reference_trajectory").map_err(in_task)?;
        let reference = read_trajectory(&root.join(&task.reference_trajectory), Some(&path), &screens)?;
        tasks.push(LoadedTask {
            task,
            file: rel.clone(),
            evaluators,
            reference,
        });
    }

    let mut utgs = BTreeMap::new();
    if opts.utgs {
        for (app, rel) in &manifest.apps {
            check_relative(rel, &format!("apps.{app}")).map_err(in_manifest)?;
            let utg = load_utg(&root.join(rel), &manifest_path, &screens)?;
            if utg.app_id != *app {
                return Err(SchemaError::new("app_id", format!("expected {app:?}"))
                    .in_file(root.join(rel))
                    .into());
            }
            utgs.insert(app.clone(), Arc::new(utg));
        }
    }

    let probes = load_probes(&root, &manifest, &manifest_path, &screens, &seen)?;
    Ok(Suite {
        root,
        manifest,
        tasks,
        utgs,
        probes,
        screens,
    })
}

pub fn load_utg(path: &Path, from: &Path, screens: &ScreenStore) -> Result<Utg, LoadError> {
    let file: UtgFile = read_doc(path, Some(from))?;
    let bad = |at: String, msg: String| LoadError::from(SchemaError::new(at, msg).in_file(path));
    let mut states = BTreeMap::new();
    for (fp, rel) in &file.states {
        check_relative(rel, &format!("states.{fp}")).map_err(|e| e.in_file(path))?;
        let screen = screens.load(rel, path)?;
        let actual = fingerprint(&screen);
        if actual != *fp {
            return Err(bad(format!("states.{fp}"), format!("{rel} has fingerprint {actual}")));
        }
        states.insert(
            fp.clone(),
            State {
                screen_ref: rel.clone(),
                screen,
            },
        );
    }
    if !states.contains_key(&file.initial) {
        return Err(bad("initial".into(), "not a known state".into()));
    }
    let mut edges = BTreeMap::new();
    for (i, EdgeRecord { from, key, to }) in file.edges.iter().enumerate() {
        for (field, fp) in [("from", from), ("to", to)] {
            if !states.contains_key(fp) {
                return Err(bad(format!("edges[{i}].{field}"), format!("unknown state {fp}")));
            }
        }
        if edges.insert((from.clone(), key.clone()), to.clone()).is_some() {
            return Err(bad(format!("edges[{i}]"), "duplicate (from, key) pair".into()));
        }
    }
    Ok(Utg {
        app_id: file.app_id,
        initial: file.initial,
        states,
        edges,
    })
}

fn unique_ids<'a>(ids: impl Iterator<Item = &'a str>, path: &Path) -> Result<(), LoadError> {
    let mut seen = BTreeSet::new();
    for (i, id) in ids.enumerate() {
        if !seen.insert(id) {
            return Err(SchemaError::new(format!("line {}", i + 1), format!("duplicate item id {id:?}"))
                .in_file(path)
                .into());
        }
    }
    Ok(())
}

fn load_probes(
    root: &Path,
    manifest: &Manifest,
    manifest_path: &Path,
    screens: &ScreenStore,
    task_ids: &BTreeSet<String>,
) -> Result<ProbeSet, LoadError> {
    let mut set = ProbeSet::default();
    let refs = &manifest.probes;
    let resolve = |rel: &String, name: &str| -> Result<PathBuf, LoadError> {
        check_relative(rel, &format!("probes.{name}")).map_err(|e| e.in_file(manifest_path))?;
        Ok(root.join(rel))
    };
    if let Some(rel) = &refs.knowledge {
        let path = resolve(rel, "knowledge")?;
        let items: Vec<KnowledgeItem> = read_jsonl(&path, Some(manifest_path))?;
        unique_ids(items.iter().map(|i| i.id.as_str()), &path)?;
        for (i, item) in items.iter().enumerate() {
            item.check()
                .map_err(|m| SchemaError::new(format!("line {}", i + 1), m).in_file(&path))?;
        }
        set.knowledge = Some(items);
    }
    if let Some(rel) = &refs.completion {
        let path = resolve(rel, "completion")?;
        let items: Vec<CompletionItem> = read_jsonl(&path, Some(manifest_path))?;
        unique_ids(items.iter().map(|i| i.id.as_str()), &path)?;
        for (i, item) in items.iter().enumerate() {
            let at = format!("line {}", i + 1);
            check_relative(&item.screen, &format!("{at}.screen")).map_err(|e| e.in_file(&path))?;
            screens.load(&item.screen, &path)?;
            if item.instruction.is_none() && !task_ids.contains(&item.task_id) {
                return Err(SchemaError::new(
                    format!("{at}.task_id"),
                    format!("unknown task {:?} and no instruction given", item.task_id),
                )
                .in_file(&path)
                .into());
            }
        }
        set.completion = Some(items);
    }
    if let Some(rel) = &refs.grounding {
        let path = resolve(rel, "grounding")?;
        let items: Vec<GroundingItem> = read_jsonl(&path, Some(manifest_path))?;
        unique_ids(items.iter().map(|i| i.id.as_str()), &path)?;
        for (i, item) in items.iter().enumerate() {
            let at = format!("line {}", i + 1);
            check_relative(&item.screen, &format!("{at}.screen")).map_err(|e| e.in_file(&path))?;
            let screen = screens.load(&item.screen, &path)?;
            if let Some(shot) = &item.screenshot {
                check_relative(shot, &format!("{at}.screenshot")).map_err(|e| e.in_file(&path))?;
                let shot_path = root.join(shot);
                if !shot_path.is_file() {
                    return Err(LoadError::DanglingRef {
                        from: path.clone(),
                        target: shot_path,
                    });
                }
            }
            let b = item.gt_bbox;
            let (w, h) = screen.screen_size;
            if b.area() <= 0 || b.left < 0 || b.top < 0 || b.right > w as i32 || b.bottom > h as i32 {
                return Err(SchemaError::new(
                    format!("{at}.gt_bbox"),
                    "must be non-empty and inside the screen",
                )
                .in_file(&path)
                .into());
            }
        }
        set.grounding = Some(items);
    }
    if let Some(rel) = &refs.focused {
        let path = resolve(rel, "focused")?;
        let items: Vec<FocusedItem> = read_jsonl(&path, Some(manifest_path))?;
        unique_ids(items.iter().map(|i| i.id.as_str()), &path)?;
        for (i, item) in items.iter().enumerate() {
            item.compiled()
                .map_err(|m| SchemaError::new(format!("line {}.compliance_pattern", i + 1), m).in_file(&path))?;
        }
        set.focused = Some(items);
    }
    Ok(set)
}

// ---------------------------------------------------------------------------
// Lints

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lint {
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Lint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

/// Fingerprints a replay of the trajectory's executed actions must visit:
/// the initial screen, then the screen after each executed non-stop action.
pub fn expected_states(t: &Trajectory) -> Vec<String> {
    let mut out = vec![fingerprint(t.screen_at(0))];
    for (i, step) in t.steps.iter().enumerate() {
        if step.executed_action().is_some_and(|a| !a.is_stop()) {
            out.push(fingerprint(t.screen_at(i + 1)));
        }
    }
    out
}

/// Cross-artifact checks that go beyond schema validity.
pub fn lint(suite: &Suite) -> Vec<Lint> {
    let mut out = Vec::new();
    for lt in &suite.tasks {
        let id = &lt.task.id;
        let sat = task_satisfaction(&lt.evaluators, &lt.reference);
        if !sat.pass {
            out.push(Lint {
                subject: id.clone(),
                message: format!(
                    "reference trajectory satisfies {} of {} evaluators",
                    sat.satisfied, sat.total
                ),
            });
        }
        if lt.reference.stop_reason != StopReason::AgentStop {
            out.push(Lint {
                subject: id.clone(),
                message: "reference trajectory does not end with press [stop]".into(),
            });
        }
        if suite.manifest.apps.is_empty() {
            continue;
        }
        let Some(utg) = suite.utgs.get(&lt.task.app_id) else {
            continue;
        };
        let mut env = crate::env::ReplayEnv::new(utg.clone(), &suite.root, crate::env::NoTransitionPolicy::Fail);
        let actions = lt.reference.executed_actions();
        match crate::env::replay_fingerprints(&mut env, &actions) {
            Ok(fps) if fps == expected_states(&lt.reference) => {}
            Ok(_) => out.push(Lint {
                subject: id.clone(),
                message: format!("replay over utg/{} diverges from the reference", lt.task.app_id),
            }),
            Err(e) => out.push(Lint {
                subject: id.clone(),
                message: format!("replay over utg/{} failed: {e}", lt.task.app_id),
            }),
        }
    }

    if let Some(items) = &suite.probes.completion {
        let mut by_task: BTreeMap<&str, Vec<&CompletionItem>> = BTreeMap::new();
        for item in items {
            by_task.entry(&item.task_id).or_default().push(item);
        }
        for (task, group) in by_task {
            let longest = group.iter().map(|i| i.action_history.len()).max().unwrap_or(0);
            let stops: Vec<_> = group.iter().filter(|i| i.label == Label::Stop).collect();
            if stops.len() != 1 || stops[0].action_history.len() != longest {
                out.push(Lint {
                    subject: format!("completion/{task}"),
                    message: "exactly one item, the final step, must be labeled stop".into(),
                });
            }
        }
    }
    if let Some(items) = &suite.probes.focused {
        for item in items {
            if let (Some(example), Ok(re)) = (focused_example(&item.format_instruction), item.compiled()) {
                if !re.is_match(example) {
                    out.push(Lint {
                        subject: format!("focused/{}", item.id),
                        message: format!("pattern does not match the embedded example {example:?}"),
                    });
                }
            }
        }
    }
    out
}

/// The reference actions an oracle replays, stop excluded.
pub fn reference_actions(t: &Trajectory) -> Vec<Action> {
    t.executed_actions().into_iter().cloned().collect()
}
