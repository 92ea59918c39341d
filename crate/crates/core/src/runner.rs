//! Run directories: executing episodes and probes, and re-scoring offline.
//!
//! Layout of `runs/<id>/`:
//! `run.json`, `trajectories/<task>.jsonl`, `transcripts/<task>.jsonl`,
//! `probes/<dimension>.jsonl`, `report.json`, `report.csv`, `radar.csv`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::action::{render_action, Action, Point, Verb};
use crate::agent::{oracle_script, run_episode, EpisodeConfig, TEMPLATE_VERSION};
use crate::backend::{BackendSource, RequestParams, ScriptBook};
use crate::env::{NoTransitionPolicy, ReplayEnv};
use crate::model::UIScreen;
use crate::observation::ObservationMode;
use crate::probes::{
    fan_out, focused_example, run_completion, run_focused, run_grounding, run_knowledge, score_completion,
    score_focused, score_grounding, score_knowledge, CompletionItem, Dimension, Label, ProbeRecord, ScreenSource,
};
use crate::report::{export_report, score_run, ExportFormat, ProbeScores, RunReport, TrajectoryOutcome};
use crate::suite::{parse_jsonl, read_doc, read_trajectory, to_versioned_line, to_versioned_pretty, Suite};
use crate::{Error, LoadError};

/// Everything that can change what a run produces. Paths and worker counts
/// are left out so the digest is stable across machines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub suite: String,
    pub suite_version: String,
    pub backend: String,
    pub model: String,
    pub mode: ObservationMode,
    pub max_steps: usize,
    pub policy: NoTransitionPolicy,
    pub seed: Option<u64>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub template: String,
    pub endpoint: Option<String>,
    /// Name of the variable holding the token; never the token itself.
    pub api_key_env: Option<String>,
}

impl RunConfig {
    pub fn new(suite: &Suite, backend: impl Into<String>) -> Self {
        let params = RequestParams::default();
        let episode = EpisodeConfig::default();
        RunConfig {
            suite: suite.manifest.name.clone(),
            suite_version: suite.manifest.version.clone(),
            backend: backend.into(),
            model: params.model,
            mode: episode.mode,
            max_steps: episode.max_steps,
            policy: episode.policy,
            seed: params.seed,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            template: TEMPLATE_VERSION.to_string(),
            endpoint: None,
            api_key_env: None,
        }
    }

    pub fn params(&self) -> RequestParams {
        RequestParams {
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            seed: self.seed,
        }
    }

    pub fn episode(&self) -> EpisodeConfig {
        EpisodeConfig {
            mode: self.mode,
            max_steps: self.max_steps,
            policy: self.policy,
            params: self.params(),
            ..Default::default()
        }
    }

    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn check(&self) -> Result<(), Error> {
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn jsonl<T: Serialize>(rows: &[T]) -> String {
    rows.iter().map(|r| to_versioned_line(r) + "\n").collect()
}

/// Name recorded in reports: the directory name, never a full path.
pub fn run_name(run_dir: &Path) -> String {
    run_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

pub fn trajectory_path(run_dir: &Path, task_id: &str) -> PathBuf {
    run_dir.join("trajectories").join(format!("{task_id}.jsonl"))
}

pub fn probe_path(run_dir: &Path, dim: Dimension) -> PathBuf {
    run_dir.join("probes").join(format!("{}.jsonl", dim.as_str()))
}

fn write_config(cfg: &RunConfig, run_dir: &Path) -> Result<(), Error> {
    let path = run_dir.join("run.json");
    if path.is_file() {
        let old: RunConfig = read_doc(&path, None)?;
        if old != *cfg {
            log::warn!("{}: overwriting a run made with a different configuration", path.display());
        }
    }
    write(&path, to_versioned_pretty(cfg))
}

/// Run one episode per task and write trajectories, transcripts and reports.
pub fn run_e2e(
    suite: &Suite,
    cfg: &RunConfig,
    source: &dyn BackendSource,
    run_dir: &Path,
    workers: usize,
) -> Result<RunReport, Error> {
    cfg.check()?;
    for t in &suite.tasks {
        if !suite.utgs.contains_key(&t.task.app_id) {
            return Err(Error::Config(format!("no UI transition graph for app {:?}", t.task.app_id)));
        }
    }
    write_config(cfg, run_dir)?;
    let episode_cfg = cfg.episode();
    let results = fan_out(suite.tasks.len(), workers, |i| {
        let lt = &suite.tasks[i];
        let utg = Arc::clone(&suite.utgs[&lt.task.app_id]);
        let mut env = ReplayEnv::new(utg, &suite.root, cfg.policy);
        let backend = source.for_subject(&lt.task.id);
        run_episode(&lt.task.instruction, &mut env, &backend, &episode_cfg)
    });
    for (lt, result) in suite.tasks.iter().zip(results) {
        let id = &lt.task.id;
        match result {
            Ok(ep) => {
                if let Some(e) = &ep.error {
                    log::warn!("task {id}: {e}");
                }
                write(&trajectory_path(run_dir, id), crate::suite::write_trajectory(&ep.trajectory))?;
                write(&run_dir.join("transcripts").join(format!("{id}.jsonl")), jsonl(&ep.transcript))?;
            }
            // No trajectory is written; scoring counts the task as failed.
            Err(e) => log::error!("task {id}: episode could not start: {e}"),
        }
    }
    score_dir(suite, run_dir)
}

impl ScreenSource for Suite {
    fn screen(&self, reference: &str) -> Result<Arc<UIScreen>, String> {
        self.screens
            .load(reference, &self.root.join("manifest.json"))
            .map_err(|e| e.to_string())
    }

    fn screenshot(&self, screen: &UIScreen, override_ref: Option<&str>) -> Result<Option<Vec<u8>>, String> {
        match override_ref {
            Some(rel) => {
                let path = self.root.join(rel);
                std::fs::read(&path).map(Some).map_err(|e| format!("{}: {e}", path.display()))
            }
            None => self.screens.read_screenshot(screen).map_err(|e| e.to_string()),
        }
    }
}

/// Instruction for a completion item: its own, else its task's.
pub fn completion_instruction(suite: &Suite, item: &CompletionItem) -> String {
    item.instruction
        .clone()
        .or_else(|| suite.task(&item.task_id).map(|t| t.task.instruction.clone()))
        .unwrap_or_default()
}

/// Query one probe dimension and write `probes/<dim>.jsonl`, then rescore.
/// `repair` answers the format-repair hop for knowledge and grounding.
pub fn run_probe(
    suite: &Suite,
    dim: Dimension,
    cfg: &RunConfig,
    source: &dyn BackendSource,
    repair: Option<&dyn BackendSource>,
    run_dir: &Path,
    workers: usize,
) -> Result<RunReport, Error> {
    cfg.check()?;
    let missing = || Error::Config(format!("suite has no {} probe set", dim.as_str()));
    let params = cfg.params();
    let p = &suite.probes;
    let records = match dim {
        Dimension::Knowledge => run_knowledge(source, repair, p.knowledge.as_deref().ok_or_else(missing)?, &params, workers),
        Dimension::Completion => {
            let items = p.completion.as_deref().ok_or_else(missing)?;
            let instruction_of = |item: &CompletionItem| completion_instruction(suite, item);
            run_completion(source, items, &instruction_of, suite, cfg.mode, &params, workers)
        }
        Dimension::Grounding => {
            let items = p.grounding.as_deref().ok_or_else(missing)?;
            run_grounding(source, repair, items, suite, cfg.mode, &params, workers)
        }
        Dimension::Focused => run_focused(source, p.focused.as_deref().ok_or_else(missing)?, &params, workers),
    };
    write_config(cfg, run_dir)?;
    write(&probe_path(run_dir, dim), jsonl(&records))?;
    score_dir(suite, run_dir)
}

/// Human-readable load error without absolute paths, for report notes.
fn describe(e: &LoadError) -> String {
    match e {
        LoadError::Schema(s) => format!("{}: {}", s.path, s.message),
        LoadError::DanglingRef { target, .. } => format!(
            "dangling reference to {}",
            target.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
        ),
        LoadError::Io { source, .. } => source.to_string(),
    }
}

fn read_records(path: &Path) -> Result<Option<Vec<ProbeRecord>>, Error> {
    if !path.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(Some(parse_jsonl(&text).map_err(|e| e.in_file(path))?))
}

/// Score a run directory from its stored files alone; no backend involved.
/// Writes and returns the report.
pub fn score_dir(suite: &Suite, run_dir: &Path) -> Result<RunReport, Error> {
    let report = build_report(suite, run_dir)?;
    export_report(&report, &ExportFormat::ALL, run_dir)?;
    Ok(report)
}

/// Like `score_dir` but writes nothing.
pub fn build_report(suite: &Suite, run_dir: &Path) -> Result<RunReport, Error> {
    if !run_dir.is_dir() {
        return Err(Error::Config(format!("run directory {} does not exist", run_dir.display())));
    }
    let config_path = run_dir.join("run.json");
    let digest = if config_path.is_file() {
        Some(read_doc::<RunConfig>(&config_path, None)?.digest())
    } else {
        None
    };

    let e2e = if run_dir.join("trajectories").is_dir() {
        let mut trajectories: BTreeMap<String, TrajectoryOutcome> = BTreeMap::new();
        for lt in &suite.tasks {
            let path = trajectory_path(run_dir, &lt.task.id);
            if !path.is_file() {
                continue;
            }
            let outcome = read_trajectory(&path, None, &suite.screens).map_err(|e| {
                log::error!("{e}");
                describe(&e)
            });
            trajectories.insert(lt.task.id.clone(), outcome);
        }
        Some(score_run(&suite.tasks, &trajectories))
    } else {
        None
    };

    let p = &suite.probes;
    let mut scores = ProbeScores::default();
    if let (Some(items), Some(records)) = (&p.knowledge, read_records(&probe_path(run_dir, Dimension::Knowledge))?) {
        scores.knowledge = Some(score_knowledge(items, &records));
    }
    if let (Some(items), Some(records)) = (&p.completion, read_records(&probe_path(run_dir, Dimension::Completion))?) {
        scores.completion = Some(score_completion(items, &records));
    }
    if let (Some(items), Some(records)) = (&p.grounding, read_records(&probe_path(run_dir, Dimension::Grounding))?) {
        let lookup = |r: &str| suite.screen(r).ok();
        scores.grounding = Some(score_grounding(items, &records, &lookup));
    }
    if let (Some(items), Some(records)) = (&p.focused, read_records(&probe_path(run_dir, Dimension::Focused))?) {
        scores.focused = Some(score_focused(items, &records));
    }

    Ok(RunReport::new(
        run_name(run_dir),
        (&suite.manifest.name, &suite.manifest.version),
        digest,
        e2e,
        &scores,
    ))
}

// ---------------------------------------------------------------------------
// Oracle scripts

/// Per-task scripts replaying each reference (optionally minus its last
/// action), keyed by task id.
pub fn oracle_book(suite: &Suite, sabotage: bool) -> ScriptBook {
    ScriptBook {
        responses: suite
            .tasks
            .iter()
            .map(|t| (t.task.id.clone(), oracle_script(&t.reference, sabotage)))
            .collect(),
        repeat_last: false,
    }
}

/// Ground-truth answers for every probe item, keyed by item id.
pub fn probe_oracle_book(suite: &Suite) -> ScriptBook {
    let mut responses = BTreeMap::new();
    let p = &suite.probes;
    for item in p.knowledge.iter().flatten() {
        responses.insert(item.id.clone(), vec![item.answer().to_string()]);
    }
    for item in p.completion.iter().flatten() {
        let label = match item.label {
            Label::Continue => "continue",
            Label::Stop => "stop",
        };
        responses.insert(item.id.clone(), vec![label.to_string()]);
    }
    for item in p.grounding.iter().flatten() {
        let (x, y) = item.gt_bbox.center();
        let at = Point { x: x as u32, y: y as u32 };
        let action = match item.gt_action_verb {
            Verb::Click => Action::ClickXY(at),
            Verb::LongClick => Action::LongClickXY(at),
            Verb::Text => Action::TextXY(at, "text".into()),
            Verb::Swipe => Action::SwipeXYXY(at, at),
            Verb::Press => continue,
        };
        responses.insert(item.id.clone(), vec![render_action(&action)]);
    }
    for item in p.focused.iter().flatten() {
        let example = focused_example(&item.format_instruction).unwrap_or_default();
        responses.insert(item.id.clone(), vec![example.to_string()]);
    }
    ScriptBook {
        responses,
        repeat_last: false,
    }
}

/// Parse a script file: `{"format_version":1,"responses":{id:[...]}}`.
pub fn read_script(path: &Path) -> Result<ScriptBook, LoadError> {
    read_doc(path, None)
}

pub fn write_script(book: &ScriptBook) -> String {
    to_versioned_pretty(book)
}
