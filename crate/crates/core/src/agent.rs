//! ReAct-style episode loop: observe, prompt, parse, validate, act.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::action::{action_from_response, extract_action, render_action, validate, Action};
use crate::backend::{Backend, ChatMessage, ChatRequest, RequestParams};
use crate::env::{action_key, EnvError, Environment, Frame, NoTransitionPolicy};
use crate::model::{fingerprint, StopReason, Step, Trajectory};
use crate::observation::{build_observation, Observation, ObservationMode};

pub const TEMPLATE_VERSION: &str = "react-v1";

/// One row per action form: usage and description.
pub const ACTION_SPACE: [(&str, &str); 14] = [
    ("click [elem]", "click the element"),
    ("longclick [elem]", "long click the element"),
    ("text [elem] [string]", "text the given string on the element"),
    ("swipe [elem] [dir]", "swipe the element in the given direction (up, down, left or right)"),
    ("click [x,y]", "click (x,y) coordination on the screen"),
    ("longclick [x,y]", "long click (x,y) coordination on the screen"),
    ("text [x,y] [string]", "text the given string on the (x,y) coordination"),
    ("swipe [x1,y1] [x2,y2]", "swipe from (x1,y1) to (x2,y2)"),
    ("press [back]", "Navigate to the previous screen"),
    ("press [home]", "Navigate to the Home screen"),
    ("press [restart]", "Navigate to the home screen of the app"),
    ("press [wait]", "Wait for page rendering and do nothing"),
    ("press [enter]", "Send the Enter event"),
    ("press [stop]", "Stop exploration and complete the task"),
];

const USER_TEMPLATE: &str = "Task: {instruction}\n\n{observation}\n\n{history}\n\
Think step by step about what to do next. Then write exactly one action on the last line.";

pub fn system_prompt() -> &'static str {
    static PROMPT: OnceLock<String> = OnceLock::new();
    PROMPT.get_or_init(|| {
        let mut s = String::from(
            "You are an agent operating an Android app on a phone to complete a task for the user.\n\
             At each step you see the current screen and the actions taken so far, and you choose the next action.\n\
             Interactable elements are identified by an index [i]. Coordinates are pixels from the top-left corner.\n\n\
             Action space:\n",
        );
        for (usage, description) in ACTION_SPACE {
            s.push_str(&format!("- {usage}: {description}\n"));
        }
        s.push_str(
            "\nRules:\n\
             - Do not repeat actions that failed or had no effect.\n\
             - Use press [stop] once the task is complete.\n\
             - Output format: reason briefly, then put the action alone on the final line, \
             written exactly as in the action space, e.g. click [3].",
        );
        s
    })
}

/// Digest of the prompt templates; reports cite it.
pub fn template_hash() -> String {
    let mut h = Sha256::new();
    h.update(TEMPLATE_VERSION.as_bytes());
    h.update(b"\n");
    h.update(system_prompt().as_bytes());
    h.update(b"\n");
    h.update(USER_TEMPLATE.as_bytes());
    hex::encode(h.finalize())
}

/// A previously issued action and, if it went wrong, why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub action: String,
    pub note: Option<String>,
}

pub fn history_block<'a>(entries: impl IntoIterator<Item = &'a str>) -> String {
    let lines: Vec<String> = entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| format!("{}. {e}", i + 1))
        .collect();
    if lines.is_empty() {
        "Previous actions: (none)\n".to_string()
    } else {
        format!("Previous actions:\n{}\n", lines.join("\n"))
    }
}

fn describe_observation(obs: &Observation, size: (u32, u32)) -> String {
    let (w, h) = size;
    match obs.mode {
        ObservationMode::A11yFull => format!(
            "Current screen ({w}x{h}), UI hierarchy:\n{}",
            obs.text_payload.as_deref().unwrap_or_default()
        ),
        ObservationMode::A11ySimplified => format!(
            "Current screen ({w}x{h}), interactable elements:\n{}",
            obs.text_payload.as_deref().unwrap_or_default()
        ),
        ObservationMode::Image => {
            format!("Current screen ({w}x{h}): see the attached screenshot.")
        }
        ObservationMode::AnnotatedImage => format!(
            "Current screen ({w}x{h}): see the attached screenshot. \
             Each interactable element is marked with its index at its center."
        ),
    }
}

pub fn assemble_prompt(
    instruction: &str,
    obs: &Observation,
    screen_size: (u32, u32),
    history: &[HistoryEntry],
    params: &RequestParams,
) -> ChatRequest {
    let rendered: Vec<String> = history
        .iter()
        .map(|h| match &h.note {
            Some(note) => format!("{} ({note})", h.action),
            None => h.action.clone(),
        })
        .collect();
    let history = history_block(rendered.iter().map(String::as_str));
    let text = USER_TEMPLATE
        .replace("{instruction}", instruction)
        .replace("{observation}", &describe_observation(obs, screen_size))
        .replace("{history}", history.trim_end());
    let mut user = ChatMessage::user(text);
    if let Some(png) = &obs.image_payload {
        user = user.with_png(png);
    }
    params.request(vec![ChatMessage::system(system_prompt()), user])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub mode: ObservationMode,
    pub max_steps: usize,
    pub policy: NoTransitionPolicy,
    pub params: RequestParams,
    pub monitor_repetition: bool,
    pub monitor_format: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            mode: ObservationMode::A11ySimplified,
            max_steps: 30,
            policy: NoTransitionPolicy::Stay,
            params: RequestParams::default(),
            monitor_repetition: true,
            monitor_format: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorStats {
    pub total_outputs: usize,
    pub format_errors: usize,
    pub repeated_actions: usize,
    pub total_actions: usize,
}

impl MonitorStats {
    pub fn repetition_rate(&self) -> Option<f64> {
        (self.total_actions > 0).then(|| self.repeated_actions as f64 / self.total_actions as f64)
    }

    pub fn format_error_rate(&self) -> Option<f64> {
        (self.total_outputs > 0).then(|| self.format_errors as f64 / self.total_outputs as f64)
    }

    pub fn merge(&mut self, other: &MonitorStats) {
        self.total_outputs += other.total_outputs;
        self.format_errors += other.format_errors;
        self.repeated_actions += other.repeated_actions;
        self.total_actions += other.total_actions;
    }
}

/// One model call as recorded in `transcripts/<task>.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub step: usize,
    pub request_digest: String,
    pub prompt: String,
    pub images: usize,
    pub response: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub stats: MonitorStats,
    pub transcript: Vec<TranscriptEntry>,
    /// Why the episode ended early, if it did.
    pub error: Option<String>,
}

/// Tracks the two invariant monitors over one episode.
#[derive(Debug, Default)]
struct Monitors {
    stats: MonitorStats,
    previous: Option<(String, String)>,
}

impl Monitors {
    fn output(&mut self, parsed: Option<(&str, &str)>, cfg: &EpisodeConfig) {
        self.stats.total_outputs += 1;
        let Some((key, fp)) = parsed else {
            if cfg.monitor_format {
                self.stats.format_errors += 1;
            }
            self.previous = None;
            return;
        };
        self.stats.total_actions += 1;
        if cfg.monitor_repetition
            && self
                .previous
                .as_ref()
                .is_some_and(|(k, f)| k == key && f == fp)
        {
            self.stats.repeated_actions += 1;
        }
        self.previous = Some((key.to_string(), fp.to_string()));
    }
}

/// Monitor counts recomputed from a stored trajectory; equal to what the
/// live episode counted.
pub fn monitor_stats(t: &Trajectory) -> MonitorStats {
    let cfg = EpisodeConfig::default();
    let mut monitors = Monitors::default();
    for s in &t.steps {
        let fp = fingerprint(&s.screen);
        monitors.output(s.parsed.as_ref().ok().map(|_| (s.key.as_str(), fp.as_str())), &cfg);
    }
    monitors.stats
}

fn finish(
    steps: Vec<Step>,
    frame: &Frame,
    stop_reason: StopReason,
    monitors: Monitors,
    transcript: Vec<TranscriptEntry>,
    error: Option<String>,
) -> Episode {
    Episode {
        trajectory: Trajectory {
            steps,
            final_screen: frame.screen.clone(),
            final_screen_ref: frame.screen_ref.clone(),
            stop_reason,
        },
        stats: monitors.stats,
        transcript,
        error,
    }
}

/// Drive one episode from reset until the agent stops, the step budget runs
/// out, or the backend or environment fails (partial trajectory kept).
pub fn run_episode(
    instruction: &str,
    env: &mut dyn Environment,
    backend: &dyn Backend,
    cfg: &EpisodeConfig,
) -> Result<Episode, EnvError> {
    let mut frame = env.reset()?;
    let mut steps = Vec::new();
    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut monitors = Monitors::default();
    let mut transcript = Vec::new();

    for index in 0..cfg.max_steps.max(1) {
        let shot = if cfg.mode.needs_screenshot() {
            env.screenshot()?
        } else {
            None
        };
        let obs = match build_observation(cfg.mode, &frame.screen, shot.as_deref()) {
            Ok(o) => o,
            Err(e) => {
                let msg = format!("observation failed: {e}");
                return Ok(finish(steps, &frame, StopReason::EnvironmentError, monitors, transcript, Some(msg)));
            }
        };
        let request = assemble_prompt(instruction, &obs, frame.screen.screen_size, &history, &cfg.params);
        let mut entry = TranscriptEntry {
            step: index,
            request_digest: request.digest(),
            prompt: request.messages.last().map(ChatMessage::text).unwrap_or_default(),
            images: request.image_count(),
            response: None,
            error: None,
        };
        let response = match backend.complete(&request) {
            Ok(r) => r,
            Err(e) => {
                entry.error = Some(e.to_string());
                transcript.push(entry);
                let msg = format!("backend failed: {e}");
                return Ok(finish(steps, &frame, StopReason::EnvironmentError, monitors, transcript, Some(msg)));
            }
        };
        entry.response = Some(response.clone());
        transcript.push(entry);

        let parsed = action_from_response(&response);
        let key = match &parsed {
            Ok(a) => action_key(a, &frame.screen),
            Err(_) => String::new(),
        };
        monitors.output(parsed.as_ref().ok().map(|_| (key.as_str(), frame.fingerprint.as_str())), cfg);

        let mut step = Step {
            screen: frame.screen.clone(),
            screen_ref: frame.screen_ref.clone(),
            raw_output: response.clone(),
            parsed: parsed.clone(),
            rejected: None,
            key,
        };
        let action: Action = match parsed {
            Err(f) => {
                let line = extract_action(&response).map(|(_, l)| l).unwrap_or_else(|_| "(no action)".into());
                history.push(HistoryEntry {
                    action: line.trim().to_string(),
                    note: Some(format!("invalid format: {}", f.reason.as_str())),
                });
                steps.push(step);
                continue;
            }
            Ok(a) => a,
        };
        if action.is_stop() {
            steps.push(step);
            return Ok(finish(steps, &frame, StopReason::AgentStop, monitors, transcript, None));
        }
        if let Err(v) = validate(&action, &frame.screen) {
            step.rejected = Some(v);
            history.push(HistoryEntry {
                action: render_action(&action),
                note: Some(format!("failed: {}", v.as_str())),
            });
            steps.push(step);
            continue;
        }
        match env.step(&action) {
            Ok(result) => {
                history.push(HistoryEntry {
                    action: render_action(&action),
                    note: (!result.transitioned).then(|| "no effect".to_string()),
                });
                steps.push(step);
                frame = result.frame;
            }
            Err(e) => {
                steps.push(step);
                let msg = e.to_string();
                return Ok(finish(steps, &frame, StopReason::EnvironmentError, monitors, transcript, Some(msg)));
            }
        }
    }
    Ok(finish(steps, &frame, StopReason::StepLimit, monitors, transcript, None))
}

/// Responses an oracle agent gives for a reference trajectory: each executed
/// non-stop action, then `press [stop]`. `sabotage` drops the last action.
pub fn oracle_script(reference: &Trajectory, sabotage: bool) -> Vec<String> {
    let mut actions: Vec<String> = reference
        .executed_actions()
        .into_iter()
        .map(render_action)
        .collect();
    if sabotage {
        actions.pop();
    }
    actions.push("press [stop]".into());
    actions
}
