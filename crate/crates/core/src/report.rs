//! Run scoring and report export.
//!
//! Numbers are kept exact in memory and rounded to three decimals
//! (half-to-even) only when written out.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::agent::{monitor_stats, MonitorStats};
use crate::evaluator::task_satisfaction;
use crate::model::Trajectory;
use crate::probes::{CompletionScore, Confusion, FocusedScore, GroundingScore, KnowledgeDimension, KnowledgeScore, Paired};
use crate::suite::{Category, LoadedTask};
use crate::Error;

pub const SCHEMA_VERSION: u32 = 1;

pub const RADAR_HEADER: [&str; 7] = [
    "run",
    "goal_understanding",
    "app_knowledge",
    "planning",
    "grounding",
    "instruction_following",
    "end_to_end_sr",
];

/// Round to three decimals, ties to even. A value within 1e-9 of a tie
/// (after scaling) is treated as the tie.
pub fn round3(x: f64) -> f64 {
    let scaled = x * 1000.0;
    let floor = scaled.floor();
    let frac = scaled - floor;
    let r = if (frac - 0.5).abs() < 1e-9 {
        if floor % 2.0 == 0.0 {
            floor
        } else {
            floor + 1.0
        }
    } else {
        scaled.round()
    };
    r / 1000.0
}

fn ser_round<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round3(*x))
}

fn ser_round_opt<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => s.serialize_some(&round3(*v)),
        None => s.serialize_none(),
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskRow {
    pub task_id: String,
    pub app_id: String,
    pub category: Category,
    pub pass: bool,
    pub satisfied: usize,
    pub total: usize,
    #[serde(serialize_with = "ser_round")]
    pub acp_fraction: f64,
    pub steps: usize,
    pub stop_reason: Option<String>,
    pub stats: Option<MonitorStats>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Aggregate {
    pub tasks: usize,
    pub passed: usize,
    #[serde(serialize_with = "ser_round_opt")]
    pub sr: Option<f64>,
    #[serde(serialize_with = "ser_round_opt")]
    pub acp: Option<f64>,
    /// Pooled over tasks: summed events over summed actions/outputs.
    #[serde(serialize_with = "ser_round_opt")]
    pub repetition_rate: Option<f64>,
    #[serde(serialize_with = "ser_round_opt")]
    pub format_error_rate: Option<f64>,
    pub monitors: MonitorStats,
}

impl Aggregate {
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a TaskRow>) -> Self {
        let mut agg = Aggregate::default();
        let mut acp_sum = 0.0;
        for row in rows {
            agg.tasks += 1;
            agg.passed += usize::from(row.pass);
            acp_sum += row.acp_fraction;
            if let Some(s) = &row.stats {
                agg.monitors.merge(s);
            }
        }
        agg.sr = ratio(agg.passed, agg.tasks);
        agg.acp = (agg.tasks > 0).then(|| acp_sum / agg.tasks as f64);
        agg.repetition_rate = agg.monitors.repetition_rate();
        agg.format_error_rate = agg.monitors.format_error_rate();
        agg
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct E2eScore {
    pub tasks: Vec<TaskRow>,
    pub overall: Aggregate,
    pub by_category: BTreeMap<String, Aggregate>,
}

/// A stored trajectory for a task, or why it could not be read.
pub type TrajectoryOutcome = Result<Trajectory, String>;

/// Score every task. Tasks without an entry in `trajectories` fail with a
/// note; unreadable trajectories fail with the error as the note.
pub fn score_run(tasks: &[LoadedTask], trajectories: &BTreeMap<String, TrajectoryOutcome>) -> E2eScore {
    let rows: Vec<TaskRow> = tasks
        .iter()
        .map(|lt| {
            let t = &lt.task;
            let mut row = TaskRow {
                task_id: t.id.clone(),
                app_id: t.app_id.clone(),
                category: t.category,
                pass: false,
                satisfied: 0,
                total: lt.evaluators.len(),
                acp_fraction: 0.0,
                steps: 0,
                stop_reason: None,
                stats: None,
                note: None,
            };
            match trajectories.get(&t.id) {
                None => row.note = Some("missing trajectory".into()),
                Some(Err(e)) => row.note = Some(format!("unreadable trajectory: {e}")),
                Some(Ok(traj)) => {
                    let s = task_satisfaction(&lt.evaluators, traj);
                    row.pass = s.pass;
                    row.satisfied = s.satisfied;
                    row.acp_fraction = s.fraction();
                    row.steps = traj.len();
                    row.stop_reason = Some(traj.stop_reason.as_str().to_string());
                    row.stats = Some(monitor_stats(traj));
                }
            }
            row
        })
        .collect();
    let overall = Aggregate::from_rows(&rows);
    let by_category = [Category::User, Category::Testing]
        .into_iter()
        .map(|c| {
            let agg = Aggregate::from_rows(rows.iter().filter(|r| r.category == c));
            (c.as_str().to_string(), agg)
        })
        .collect();
    E2eScore {
        tasks: rows,
        overall,
        by_category,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RateSummary {
    pub items: usize,
    pub correct: usize,
    pub unparsed: usize,
    #[serde(serialize_with = "ser_round_opt")]
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PairedSummary {
    pub original: RateSummary,
    pub repaired: RateSummary,
}

impl From<&Paired> for PairedSummary {
    fn from(p: &Paired) -> Self {
        let one = |a: &crate::probes::Accuracy| RateSummary {
            items: a.items,
            correct: a.correct,
            unparsed: a.unparsed,
            rate: a.rate(),
        };
        PairedSummary {
            original: one(&p.original),
            repaired: one(&p.repaired),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct KnowledgeSummary {
    pub overall: PairedSummary,
    pub goal_understanding: Option<PairedSummary>,
    pub app_knowledge: Option<PairedSummary>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CompletionSummary {
    pub confusion: Confusion,
    #[serde(serialize_with = "ser_round_opt")]
    pub acc_continue: Option<f64>,
    #[serde(serialize_with = "ser_round_opt")]
    pub acc_stop: Option<f64>,
    #[serde(serialize_with = "ser_round_opt")]
    pub overall: Option<f64>,
    #[serde(serialize_with = "ser_round_opt")]
    pub task_success: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GroundingSummary {
    pub accuracy: PairedSummary,
    pub format_errors: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FocusedSummary {
    pub items: usize,
    pub violations: usize,
    #[serde(serialize_with = "ser_round_opt")]
    pub violation_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ProbeSummary {
    pub knowledge: Option<KnowledgeSummary>,
    pub completion: Option<CompletionSummary>,
    pub grounding: Option<GroundingSummary>,
    pub focused: Option<FocusedSummary>,
}

/// Probe scores as loaded from a run directory; any subset may be present.
#[derive(Debug, Clone, Default)]
pub struct ProbeScores {
    pub knowledge: Option<KnowledgeScore>,
    pub completion: Option<CompletionScore>,
    pub grounding: Option<GroundingScore>,
    pub focused: Option<FocusedScore>,
}

impl ProbeScores {
    pub fn summary(&self) -> ProbeSummary {
        ProbeSummary {
            knowledge: self.knowledge.as_ref().map(|k| KnowledgeSummary {
                overall: (&k.overall).into(),
                goal_understanding: k.by_dimension.get(&KnowledgeDimension::GoalUnderstanding).map(Into::into),
                app_knowledge: k.by_dimension.get(&KnowledgeDimension::AppKnowledge).map(Into::into),
            }),
            completion: self.completion.as_ref().map(|c| CompletionSummary {
                confusion: c.confusion,
                acc_continue: c.acc_continue,
                acc_stop: c.acc_stop,
                overall: c.overall,
                task_success: c.task_success,
            }),
            grounding: self.grounding.as_ref().map(|g| GroundingSummary {
                accuracy: (&g.accuracy).into(),
                format_errors: g.format_errors,
            }),
            focused: self.focused.as_ref().map(|f| FocusedSummary {
                items: f.items,
                violations: f.violations,
                violation_rate: f.violation_rate,
            }),
        }
    }
}

/// One scalar per capability; `None` when the data behind it is absent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Dimensions {
    #[serde(serialize_with = "ser_round_opt")]
    pub goal_understanding: Option<f64>,
    #[serde(serialize_with = "ser_round_opt")]
    pub app_knowledge: Option<f64>,
    #[serde(serialize_with = "ser_round_opt")]
    pub planning: Option<f64>,
    #[serde(serialize_with = "ser_round_opt")]
    pub grounding: Option<f64>,
    #[serde(serialize_with = "ser_round_opt")]
    pub instruction_following: Option<f64>,
    #[serde(serialize_with = "ser_round_opt")]
    pub end_to_end_sr: Option<f64>,
}

pub const DIMENSION_RULES: [(&str, &str); 6] = [
    ("goal_understanding", "knowledge probe accuracy on goal-understanding items, after format repair"),
    ("app_knowledge", "knowledge probe accuracy on app-knowledge items, after format repair"),
    ("planning", "completion probe accuracy over all items, unweighted"),
    ("grounding", "grounding probe hit rate, after format repair"),
    ("instruction_following", "1 - mean of the available values among (focused violation rate, episode format-error rate)"),
    ("end_to_end_sr", "passed tasks / all tasks"),
];

fn repaired_rate(p: &Paired) -> Option<f64> {
    p.repaired.rate()
}

pub fn dimensions(e2e: Option<&E2eScore>, probes: &ProbeScores) -> Dimensions {
    let knowledge = |d| {
        probes
            .knowledge
            .as_ref()
            .and_then(|k| k.by_dimension.get(&d))
            .and_then(repaired_rate)
    };
    let parts: Vec<f64> = [
        probes.focused.as_ref().and_then(|f| f.violation_rate),
        e2e.and_then(|e| e.overall.format_error_rate),
    ]
    .into_iter()
    .flatten()
    .collect();
    Dimensions {
        goal_understanding: knowledge(KnowledgeDimension::GoalUnderstanding),
        app_knowledge: knowledge(KnowledgeDimension::AppKnowledge),
        planning: probes.completion.as_ref().and_then(|c| c.overall),
        grounding: probes.grounding.as_ref().and_then(|g| repaired_rate(&g.accuracy)),
        instruction_following: (!parts.is_empty()).then(|| 1.0 - parts.iter().sum::<f64>() / parts.len() as f64),
        end_to_end_sr: e2e.and_then(|e| e.overall.sr),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub run: String,
    pub suite: String,
    pub suite_version: String,
    pub config_digest: Option<String>,
    pub template_hash: String,
    pub e2e: Option<E2eScore>,
    pub probes: ProbeSummary,
    pub dimensions: Dimensions,
    pub dimension_rules: BTreeMap<String, String>,
}

impl RunReport {
    pub fn new(
        run: impl Into<String>,
        suite: (&str, &str),
        config_digest: Option<String>,
        e2e: Option<E2eScore>,
        probes: &ProbeScores,
    ) -> Self {
        RunReport {
            schema_version: SCHEMA_VERSION,
            run: run.into(),
            suite: suite.0.to_string(),
            suite_version: suite.1.to_string(),
            config_digest,
            template_hash: crate::agent::template_hash(),
            dimensions: dimensions(e2e.as_ref(), probes),
            e2e,
            probes: probes.summary(),
            dimension_rules: DIMENSION_RULES
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// sha256 of the exported JSON.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn to_csv(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            task_id: &'a str,
            app_id: &'a str,
            category: &'a str,
            pass: bool,
            satisfied: usize,
            total: usize,
            acp_fraction: String,
            steps: usize,
            stop_reason: &'a str,
            total_outputs: Option<usize>,
            format_errors: Option<usize>,
            repeated_actions: Option<usize>,
            total_actions: Option<usize>,
            note: &'a str,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let rows = self.e2e.as_ref().map(|e| e.tasks.as_slice()).unwrap_or_default();
        if rows.is_empty() {
            w.write_record(["task_id", "app_id", "category", "pass", "satisfied", "total", "acp_fraction", "steps",
                "stop_reason", "total_outputs", "format_errors", "repeated_actions", "total_actions", "note"])
                .expect("in-memory write");
        }
        for r in rows {
            w.serialize(Row {
                task_id: &r.task_id,
                app_id: &r.app_id,
                category: r.category.as_str(),
                pass: r.pass,
                satisfied: r.satisfied,
                total: r.total,
                acp_fraction: fmt3(r.acp_fraction),
                steps: r.steps,
                stop_reason: r.stop_reason.as_deref().unwrap_or(""),
                total_outputs: r.stats.map(|s| s.total_outputs),
                format_errors: r.stats.map(|s| s.format_errors),
                repeated_actions: r.stats.map(|s| s.repeated_actions),
                total_actions: r.stats.map(|s| s.total_actions),
                note: r.note.as_deref().unwrap_or(""),
            })
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn radar_row(&self) -> [String; 7] {
        let d = &self.dimensions;
        let cell = |v: Option<f64>| v.map(fmt3).unwrap_or_default();
        [
            self.run.clone(),
            cell(d.goal_understanding),
            cell(d.app_knowledge),
            cell(d.planning),
            cell(d.grounding),
            cell(d.instruction_following),
            cell(d.end_to_end_sr),
        ]
    }
}

/// Three decimals, ties to even.
pub fn fmt3(x: f64) -> String {
    format!("{:.3}", round3(x))
}

/// One row per report.
pub fn radar_csv<'a>(reports: impl IntoIterator<Item = &'a RunReport>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RADAR_HEADER).expect("in-memory write");
    for r in reports {
        w.write_record(r.radar_row()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Csv,
    Radar,
}

impl ExportFormat {
    pub const ALL: [ExportFormat; 3] = [ExportFormat::Json, ExportFormat::Csv, ExportFormat::Radar];

    pub fn file_name(&self) -> &'static str {
        match self {
            ExportFormat::Json => "report.json",
            ExportFormat::Csv => "report.csv",
            ExportFormat::Radar => "radar.csv",
        }
    }
}

/// Write the chosen formats into `dir`.
pub fn export_report(report: &RunReport, formats: &[ExportFormat], dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for f in formats {
        let body = match f {
            ExportFormat::Json => report.to_json(),
            ExportFormat::Csv => report.to_csv(),
            ExportFormat::Radar => radar_csv([report]),
        };
        let path = dir.join(f.file_name());
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
