//! Capability probes: knowledge (MCQ/BQ), completion judgment, grounding and
//! focused-context format compliance.
//!
//! Running a probe only collects raw responses ([`ProbeRecord`]). Scoring is
//! a separate pure pass over items and records, so a stored transcript can be
//! re-scored offline and always yields the same numbers.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::action::{action_from_response, render_action, Action, Target, Verb};
use crate::backend::{Backend, BackendSource, ChatMessage, ChatRequest, RequestParams};
use crate::model::{Rect, UIScreen};
use crate::observation::{build_observation, Observation, ObservationMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Knowledge,
    Completion,
    Grounding,
    Focused,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::Knowledge,
        Dimension::Completion,
        Dimension::Grounding,
        Dimension::Focused,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Dimension::Knowledge => "knowledge",
            Dimension::Completion => "completion",
            Dimension::Grounding => "grounding",
            Dimension::Focused => "focused",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown probe {s:?} (expected knowledge, completion, grounding or focused)"))
    }
}

// ---------------------------------------------------------------------------
// Items

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeDimension {
    GoalUnderstanding,
    AppKnowledge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YesNo {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Question {
    Mcq { options: Vec<String>, answer: String },
    Bq { answer: YesNo },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeItem {
    pub id: String,
    pub dimension: KnowledgeDimension,
    pub question: String,
    #[serde(flatten)]
    pub kind: Question,
}

pub const OPTION_LABELS: [char; 6] = ['A', 'B', 'C', 'D', 'E', 'F'];

impl KnowledgeItem {
    pub fn check(&self) -> Result<(), String> {
        if let Question::Mcq { options, answer } = &self.kind {
            if !(2..=6).contains(&options.len()) {
                return Err(format!("{} options; expected 2 to 6", options.len()));
            }
            let labels = &OPTION_LABELS[..options.len()];
            let ok = answer.len() == 1 && labels.iter().any(|l| answer.starts_with(*l));
            if !ok {
                return Err(format!("answer {answer:?} is not one of the option labels"));
            }
        }
        Ok(())
    }

    pub fn choice_kind(&self) -> ChoiceKind {
        match &self.kind {
            Question::Mcq { options, .. } => ChoiceKind::Mcq(options.len()),
            Question::Bq { .. } => ChoiceKind::Bq,
        }
    }

    pub fn answer(&self) -> Choice {
        match &self.kind {
            Question::Mcq { answer, .. } => Choice::Option(answer.chars().next().unwrap_or('?')),
            Question::Bq { answer } => Choice::Binary(*answer),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionItem {
    pub id: String,
    pub task_id: String,
    /// Goal shown to the model; taken from the suite task when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    pub action_history: Vec<String>,
    pub screen: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundingItem {
    pub id: String,
    pub instruction: String,
    pub screen: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screenshot: Option<String>,
    pub gt_bbox: Rect,
    pub gt_action_verb: Verb,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocusedItem {
    pub id: String,
    pub format_instruction: String,
    pub compliance_pattern: String,
}

impl FocusedItem {
    /// The compliance pattern anchored at both ends.
    pub fn compiled(&self) -> Result<Regex, String> {
        Regex::new(&format!("^(?:{})$", self.compliance_pattern)).map_err(|e| e.to_string())
    }
}

/// The example embedded in a format instruction: the first span opened by a
/// backtick and closed by a backtick or apostrophe.
pub fn focused_example(instruction: &str) -> Option<&str> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"`([^`']+)[`']").expect("valid regex"));
    re.captures(instruction).map(|c| c.get(1).expect("group").as_str())
}

pub fn is_compliant(response: &str, pattern: &Regex) -> bool {
    pattern.is_match(response.trim())
}

// ---------------------------------------------------------------------------
// Extraction

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChoiceKind {
    /// Multiple choice with this many options.
    Mcq(usize),
    Bq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Choice {
    Option(char),
    Binary(YesNo),
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Choice::Option(c) => write!(f, "{c}"),
            Choice::Binary(YesNo::Yes) => f.write_str("Yes"),
            Choice::Binary(YesNo::No) => f.write_str("No"),
        }
    }
}

/// First word-bounded answer in `response`, or `None` when there is none.
pub fn extract_choice(response: &str, kind: ChoiceKind) -> Option<Choice> {
    static LETTER: OnceLock<Regex> = OnceLock::new();
    static BINARY: OnceLock<Regex> = OnceLock::new();
    match kind {
        ChoiceKind::Mcq(k) => {
            let re = LETTER.get_or_init(|| Regex::new(r"(?i)\b([a-z])\b").expect("valid regex"));
            let labels = &OPTION_LABELS[..k.min(OPTION_LABELS.len())];
            re.captures_iter(response)
                .filter_map(|c| c[1].chars().next())
                .map(|c| c.to_ascii_uppercase())
                .find(|c| labels.contains(c))
                .map(Choice::Option)
        }
        ChoiceKind::Bq => {
            let re = BINARY.get_or_init(|| Regex::new(r"(?i)\b(yes|no)\b").expect("valid regex"));
            re.captures(response).map(|c| {
                if c[1].eq_ignore_ascii_case("yes") {
                    Choice::Binary(YesNo::Yes)
                } else {
                    Choice::Binary(YesNo::No)
                }
            })
        }
    }
}

pub fn extract_label(response: &str) -> Option<Label> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?i)\b(continue|stop)\b").expect("valid regex"));
    re.captures(response).map(|c| {
        if c[1].eq_ignore_ascii_case("stop") {
            Label::Stop
        } else {
            Label::Continue
        }
    })
}

/// Whether a predicted action hits the annotated element.
///
/// Element predictions hit when the element's center lies in the box; point
/// predictions when the point does. The verb must match either way.
pub fn grounding_hit(prediction: &Action, item: &GroundingItem, screen: &UIScreen) -> bool {
    if prediction.verb() != item.gt_action_verb {
        return false;
    }
    let (x, y) = match prediction.target() {
        Target::Element(i) => match screen.interactable(i as usize) {
            Some(node) => node.bounds.center(),
            None => return false,
        },
        Target::Point(p) => (i64::from(p.x), i64::from(p.y)),
        Target::None => return false,
    };
    item.gt_bbox.contains(x, y)
}

// ---------------------------------------------------------------------------
// Transcripts and scoring

/// One probe exchange as persisted under `runs/<id>/probes/<dim>.jsonl`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair_response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair_error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub items: usize,
    pub correct: usize,
    pub unparsed: usize,
}

impl Accuracy {
    pub fn rate(&self) -> Option<f64> {
        (self.items > 0).then(|| self.correct as f64 / self.items as f64)
    }

    fn add(&mut self, correct: bool, parsed: bool) {
        self.items += 1;
        self.correct += usize::from(correct);
        self.unparsed += usize::from(!parsed);
    }
}

/// Original and repaired accuracy over the same items.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Paired {
    pub original: Accuracy,
    pub repaired: Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub id: String,
    pub extracted: Option<String>,
    pub parsed: bool,
    pub correct: bool,
    pub repaired_extracted: Option<String>,
    pub repaired_correct: bool,
}

fn records_by_id(records: &[ProbeRecord]) -> BTreeMap<&str, &ProbeRecord> {
    records.iter().map(|r| (r.id.as_str(), r)).collect()
}

fn with_repair<T>(
    record: Option<&ProbeRecord>,
    extract: impl Fn(&str) -> Option<T>,
) -> (Option<T>, Option<T>) {
    let original = record.and_then(|r| r.response.as_deref()).and_then(&extract);
    let repaired = match &original {
        Some(_) => None,
        None => record.and_then(|r| r.repair_response.as_deref()).and_then(&extract),
    };
    (original, repaired)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeScore {
    pub overall: Paired,
    pub by_dimension: BTreeMap<KnowledgeDimension, Paired>,
    pub items: Vec<ItemOutcome>,
}

pub fn score_knowledge(items: &[KnowledgeItem], records: &[ProbeRecord]) -> KnowledgeScore {
    let by_id = records_by_id(records);
    let mut score = KnowledgeScore::default();
    for item in items {
        let kind = item.choice_kind();
        let (original, repaired) = with_repair(by_id.get(item.id.as_str()).copied(), |r| extract_choice(r, kind));
        let answer = item.answer();
        let correct = original == Some(answer);
        let final_choice = original.or(repaired);
        let repaired_correct = final_choice == Some(answer);
        for p in [&mut score.overall, score.by_dimension.entry(item.dimension).or_default()] {
            p.original.add(correct, original.is_some());
            p.repaired.add(repaired_correct, final_choice.is_some());
        }
        score.items.push(ItemOutcome {
            id: item.id.clone(),
            extracted: original.map(|c| c.to_string()),
            parsed: original.is_some(),
            correct,
            repaired_extracted: final_choice.map(|c| c.to_string()),
            repaired_correct,
        });
    }
    score
}

/// Rows are the true label, columns the prediction. An unparsed answer is
/// counted in the wrong column for its true class (and in `unparsed`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub continue_as_continue: usize,
    pub continue_as_stop: usize,
    pub stop_as_continue: usize,
    pub stop_as_stop: usize,
    pub unparsed: usize,
}

impl Confusion {
    pub fn continue_total(&self) -> usize {
        self.continue_as_continue + self.continue_as_stop
    }

    pub fn stop_total(&self) -> usize {
        self.stop_as_continue + self.stop_as_stop
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompletionScore {
    pub confusion: Confusion,
    pub acc_continue: Option<f64>,
    pub acc_stop: Option<f64>,
    pub overall: Option<f64>,
    /// Task id to whether every item of that task was judged correctly.
    pub perfect: BTreeMap<String, bool>,
    /// Unweighted mean of `perfect` over tasks.
    pub task_success: Option<f64>,
    pub items: Vec<ItemOutcome>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn label_str(l: Label) -> &'static str {
    match l {
        Label::Continue => "continue",
        Label::Stop => "stop",
    }
}

pub fn score_completion(items: &[CompletionItem], records: &[ProbeRecord]) -> CompletionScore {
    let by_id = records_by_id(records);
    let mut s = CompletionScore::default();
    for item in items {
        let predicted = by_id
            .get(item.id.as_str())
            .and_then(|r| r.response.as_deref())
            .and_then(extract_label);
        let c = &mut s.confusion;
        match (item.label, predicted) {
            (Label::Continue, Some(Label::Continue)) => c.continue_as_continue += 1,
            (Label::Continue, _) => c.continue_as_stop += 1,
            (Label::Stop, Some(Label::Stop)) => c.stop_as_stop += 1,
            (Label::Stop, _) => c.stop_as_continue += 1,
        }
        c.unparsed += usize::from(predicted.is_none());
        let correct = predicted == Some(item.label);
        let flag = s.perfect.entry(item.task_id.clone()).or_insert(true);
        *flag &= correct;
        s.items.push(ItemOutcome {
            id: item.id.clone(),
            extracted: predicted.map(|l| label_str(l).to_string()),
            parsed: predicted.is_some(),
            correct,
            repaired_extracted: predicted.map(|l| label_str(l).to_string()),
            repaired_correct: correct,
        });
    }
    let c = s.confusion;
    s.acc_continue = ratio(c.continue_as_continue, c.continue_total());
    s.acc_stop = ratio(c.stop_as_stop, c.stop_total());
    s.overall = ratio(c.continue_as_continue + c.stop_as_stop, c.continue_total() + c.stop_total());
    s.task_success = ratio(s.perfect.values().filter(|p| **p).count(), s.perfect.len());
    s
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundingScore {
    pub accuracy: Paired,
    /// Responses without a parsable action, before repair.
    pub format_errors: usize,
    pub items: Vec<ItemOutcome>,
}

/// `screens` maps each item's screen reference to the loaded screen.
pub fn score_grounding(
    items: &[GroundingItem],
    records: &[ProbeRecord],
    screens: &dyn Fn(&str) -> Option<std::sync::Arc<UIScreen>>,
) -> GroundingScore {
    let by_id = records_by_id(records);
    let mut s = GroundingScore::default();
    for item in items {
        let (original, repaired) =
            with_repair(by_id.get(item.id.as_str()).copied(), |r| action_from_response(r).ok());
        let hit = |a: &Option<Action>| match (a, screens(&item.screen)) {
            (Some(a), Some(screen)) => grounding_hit(a, item, &screen),
            _ => false,
        };
        let correct = hit(&original);
        let final_action = original.clone().or(repaired);
        let repaired_correct = hit(&final_action);
        s.accuracy.original.add(correct, original.is_some());
        s.accuracy.repaired.add(repaired_correct, final_action.is_some());
        s.format_errors += usize::from(original.is_none());
        s.items.push(ItemOutcome {
            id: item.id.clone(),
            extracted: original.as_ref().map(render_action),
            parsed: original.is_some(),
            correct,
            repaired_extracted: final_action.as_ref().map(render_action),
            repaired_correct,
        });
    }
    s
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FocusedScore {
    pub items: usize,
    pub violations: usize,
    pub violation_rate: Option<f64>,
}

pub fn score_focused(items: &[FocusedItem], records: &[ProbeRecord]) -> FocusedScore {
    let by_id = records_by_id(records);
    let mut violations = 0;
    for item in items {
        let compliant = match (by_id.get(item.id.as_str()).and_then(|r| r.response.as_deref()), item.compiled()) {
            (Some(resp), Ok(re)) => is_compliant(resp, &re),
            _ => false,
        };
        violations += usize::from(!compliant);
    }
    FocusedScore {
        items: items.len(),
        violations,
        violation_rate: ratio(violations, items.len()),
    }
}

// ---------------------------------------------------------------------------
// Prompts

pub fn knowledge_prompt(item: &KnowledgeItem) -> String {
    let mut text = format!("Question: {}\n", item.question);
    match &item.kind {
        Question::Mcq { options, .. } => {
            for (label, option) in OPTION_LABELS.iter().zip(options) {
                text.push_str(&format!("{label}. {option}\n"));
            }
            let last = OPTION_LABELS[options.len() - 1];
            text.push_str(&format!("Answer with a single option letter (A-{last})."));
        }
        Question::Bq { .. } => text.push_str("Answer with Yes or No."),
    }
    text
}

fn knowledge_format(item: &KnowledgeItem) -> String {
    match &item.kind {
        Question::Mcq { options, .. } => {
            format!("a single option letter between A and {}", OPTION_LABELS[options.len() - 1])
        }
        Question::Bq { .. } => "Yes or No".to_string(),
    }
}

pub fn repair_prompt(raw: &str, format: &str) -> String {
    format!(
        "The following answer does not follow the required format.\n\
         Required format: {format}\n\
         Answer:\n{raw}\n\
         Rewrite the answer in the required format. Reply with the rewritten answer only."
    )
}

pub fn completion_prompt(instruction: &str, history: &[String], observation: &str) -> String {
    let mut text = format!("Task: {instruction}\n");
    text.push_str(&crate::agent::history_block(history.iter().map(String::as_str)));
    text.push_str("\nCurrent screen:\n");
    text.push_str(observation);
    text.push_str(
        "\n\nHas the task been completed on the current screen? \
         Reply \"stop\" if it is complete, or \"continue\" if more actions are needed.",
    );
    text
}

pub fn grounding_prompt(instruction: &str, observation: &str) -> String {
    format!(
        "Current screen:\n{observation}\n\nInstruction: {instruction}\n\
         Respond with exactly one action for this instruction, for example `click [3]` or `click [540,1200]`."
    )
}

const GROUNDING_FORMAT: &str = "one action such as `click [3]` or `click [540,1200]`";

fn observation_message(system: Option<&str>, text: String, obs: Option<&Observation>) -> Vec<ChatMessage> {
    let mut messages = Vec::new();
    if let Some(s) = system {
        messages.push(ChatMessage::system(s));
    }
    let mut user = ChatMessage::user(text);
    if let Some(image) = obs.and_then(|o| o.image_payload.as_ref()) {
        user = user.with_png(image);
    }
    messages.push(user);
    messages
}

const PROBE_SYSTEM: &str = "You are an expert user of Android mobile apps.";

pub fn knowledge_request(item: &KnowledgeItem, params: &RequestParams) -> ChatRequest {
    params.request(observation_message(Some(PROBE_SYSTEM), knowledge_prompt(item), None))
}

/// `obs` must be built from the item's screen in the chosen mode.
pub fn completion_request(item: &CompletionItem, instruction: &str, obs: &Observation, params: &RequestParams) -> ChatRequest {
    let text = obs.text_payload.as_deref().unwrap_or("(see the attached screenshot)");
    params.request(observation_message(
        Some(PROBE_SYSTEM),
        completion_prompt(instruction, &item.action_history, text),
        Some(obs),
    ))
}

pub fn grounding_request(item: &GroundingItem, obs: &Observation, params: &RequestParams) -> ChatRequest {
    let text = obs.text_payload.as_deref().unwrap_or("(see the attached screenshot)");
    params.request(observation_message(
        Some(PROBE_SYSTEM),
        grounding_prompt(&item.instruction, text),
        Some(obs),
    ))
}

/// Focused probes send the format instruction alone, with no system prompt.
pub fn focused_request(item: &FocusedItem, params: &RequestParams) -> ChatRequest {
    params.request(vec![ChatMessage::user(item.format_instruction.clone())])
}

pub fn repair_request(raw: &str, format: &str, params: &RequestParams) -> ChatRequest {
    params.request(vec![ChatMessage::user(repair_prompt(raw, format))])
}

// ---------------------------------------------------------------------------
// Runners

/// Map `f` over `0..n` on up to `workers` threads, keeping input order.
pub fn fan_out<T: Send>(n: usize, workers: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let value = f(i);
                results.lock().expect("result slots poisoned")[i] = Some(value);
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

/// Subject under which the repair hop for item `id` is routed.
pub fn repair_subject(id: &str) -> String {
    format!("{id}#repair")
}

/// Second-chance backend, its instructions, and the check it must pass.
type Repair<'a> = (&'a dyn BackendSource, &'a str, &'a dyn Fn(&str) -> bool);

fn ask(
    id: &str,
    request: Result<ChatRequest, String>,
    backend: &dyn BackendSource,
    repair: Option<Repair<'_>>,
    params: &RequestParams,
) -> ProbeRecord {
    let mut record = ProbeRecord {
        id: id.to_string(),
        ..Default::default()
    };
    let answering = backend.for_subject(id);
    match request.and_then(|r| answering.complete(&r).map_err(|e| e.to_string())) {
        Ok(text) => record.response = Some(text),
        Err(e) => record.error = Some(e),
    }
    if let Some((repair_backend, format, parses)) = repair {
        let raw = record.response.clone().unwrap_or_default();
        if !parses(&raw) {
            let repairing = repair_backend.for_subject(&repair_subject(id));
            match repairing.complete(&repair_request(&raw, format, params)) {
                Ok(text) => record.repair_response = Some(text),
                Err(e) => record.repair_error = Some(e.to_string()),
            }
        }
    }
    record
}

pub fn run_knowledge(
    backend: &dyn BackendSource,
    repair: Option<&dyn BackendSource>,
    items: &[KnowledgeItem],
    params: &RequestParams,
    workers: usize,
) -> Vec<ProbeRecord> {
    fan_out(items.len(), workers, |i| {
        let item = &items[i];
        let kind = item.choice_kind();
        let format = knowledge_format(item);
        let parses = move |r: &str| extract_choice(r, kind).is_some();
        ask(
            &item.id,
            Ok(knowledge_request(item, params)),
            backend,
            repair.map(|b| (b, format.as_str(), &parses as &dyn Fn(&str) -> bool)),
            params,
        )
    })
}

/// Screens and screenshots a probe runner needs, keyed by suite reference.
pub trait ScreenSource: Sync {
    fn screen(&self, reference: &str) -> Result<std::sync::Arc<UIScreen>, String>;
    fn screenshot(&self, screen: &UIScreen, override_ref: Option<&str>) -> Result<Option<Vec<u8>>, String>;
}

fn observe(
    source: &dyn ScreenSource,
    screen_ref: &str,
    screenshot_ref: Option<&str>,
    mode: ObservationMode,
) -> Result<Observation, String> {
    let screen = source.screen(screen_ref)?;
    let shot = if mode.needs_screenshot() {
        source.screenshot(&screen, screenshot_ref)?
    } else {
        None
    };
    build_observation(mode, &screen, shot.as_deref()).map_err(|e| e.to_string())
}

pub fn run_completion(
    backend: &dyn BackendSource,
    items: &[CompletionItem],
    instruction_of: &(dyn Fn(&CompletionItem) -> String + Sync),
    source: &dyn ScreenSource,
    mode: ObservationMode,
    params: &RequestParams,
    workers: usize,
) -> Vec<ProbeRecord> {
    fan_out(items.len(), workers, |i| {
        let item = &items[i];
        let request = observe(source, &item.screen, None, mode)
            .map(|obs| completion_request(item, &instruction_of(item), &obs, params));
        ask(&item.id, request, backend, None, params)
    })
}

pub fn run_grounding(
    backend: &dyn BackendSource,
    repair: Option<&dyn BackendSource>,
    items: &[GroundingItem],
    source: &dyn ScreenSource,
    mode: ObservationMode,
    params: &RequestParams,
    workers: usize,
) -> Vec<ProbeRecord> {
    let parses = |r: &str| action_from_response(r).is_ok();
    fan_out(items.len(), workers, |i| {
        let item = &items[i];
        let request = observe(source, &item.screen, item.screenshot.as_deref(), mode)
            .map(|obs| grounding_request(item, &obs, params));
        ask(
            &item.id,
            request,
            backend,
            repair.map(|b| (b, GROUNDING_FORMAT, &parses as &dyn Fn(&str) -> bool)),
            params,
        )
    })
}

pub fn run_focused(
    backend: &dyn BackendSource,
    items: &[FocusedItem],
    params: &RequestParams,
    workers: usize,
) -> Vec<ProbeRecord> {
    fan_out(items.len(), workers, |i| {
        let item = &items[i];
        ask(&item.id, Ok(focused_request(item, params)), backend, None, params)
    })
}
