use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use navbench::backend::{BackendSource, CachedSource, HttpChatBackend, HttpConfig, ResponseStore};
use navbench::env::{build_utg, NoTransitionPolicy};
use navbench::model::load_screen;
use navbench::observation::{build_observation, ObservationMode};
use navbench::probes::Dimension;
use navbench::report::{fmt3, radar_csv, RunReport};
use navbench::runner::{self, RunConfig};
use navbench::suite::{lint, load_suite, load_suite_with, to_versioned_pretty, LoadOptions, Suite};
use navbench::Error;

#[derive(Parser)]
#[command(name = "navbench", version, about = "Evaluate mobile UI navigation agents offline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode per suite task.
    RunE2e(RunArgs),
    /// Query one probe dimension.
    RunProbe {
        /// knowledge, completion, grounding or focused.
        dimension: Dimension,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Re-score a run directory from stored files.
    Score {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        run: PathBuf,
    },
    /// Print the observation of a screen document.
    SerializeObs {
        /// image, a11y_full, a11y_simplified or annotated_image.
        #[arg(long)]
        mode: ObservationMode,
        #[arg(long)]
        screen: PathBuf,
        /// Screenshot for image modes (defaults to the screen's own reference).
        #[arg(long)]
        screenshot: Option<PathBuf>,
        /// Where image modes write their PNG.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild each app's transition graph from the reference trajectories.
    BuildUtg {
        #[arg(long)]
        suite: PathBuf,
    },
    /// Check a suite, including that every reference satisfies its task.
    ValidateSuite {
        #[arg(long)]
        suite: PathBuf,
    },
    /// Combine run reports into one table.
    Report {
        #[arg(long)]
        suite: PathBuf,
        /// Run directory; repeat for one row per run.
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Radar)]
        format: Format,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Radar,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    /// Replays reference actions (or ground-truth probe answers).
    Oracle,
    /// Oracle with each task's final action dropped.
    Sabotaged,
    /// Scripted responses from `--script`.
    Script,
    /// Chat-completion endpoint.
    Http,
    /// Transcript store from `--store`.
    Cached,
}

impl BackendKind {
    fn label(self) -> &'static str {
        match self {
            BackendKind::Oracle => "oracle",
            BackendKind::Sabotaged => "sabotaged",
            BackendKind::Script => "script",
            BackendKind::Http => "http",
            BackendKind::Cached => "cached",
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Suite directory.
    #[arg(long)]
    suite: PathBuf,
    /// Run directory; created if missing.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum)]
    backend: BackendKind,
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    /// With the cached backend, answer misses with this backend and record them.
    #[arg(long, value_enum)]
    record: Option<BackendKind>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the bearer token.
    #[arg(long)]
    api_key_env: Option<String>,
    /// image, a11y_full, a11y_simplified (default) or annotated_image.
    #[arg(long)]
    mode: Option<ObservationMode>,
    /// Step budget per episode [default: 30].
    #[arg(long)]
    max_steps: Option<usize>,
    /// What an unrecorded action does: stay (default) or fail.
    #[arg(long)]
    policy: Option<NoTransitionPolicy>,
    /// Episodes run in parallel.
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Extra attempts after a transient failure.
    #[arg(long)]
    retries: Option<u32>,
    /// Requests in flight at once.
    #[arg(long)]
    max_concurrent: Option<usize>,
    /// Minimum milliseconds between request starts.
    #[arg(long)]
    min_interval_ms: Option<u64>,
}

/// A failed command: `1` for validation failures, `2` for everything else.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }
}

impl From<navbench::LoadError> for Failure {
    fn from(e: navbench::LoadError) -> Self {
        Error::from(e).into()
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::RunE2e(args) => {
            let suite = load_suite(&args.suite)?;
            let report = with_source(&suite, &args, false, |source, _, cfg| {
                runner::run_e2e(&suite, cfg, source, &args.run, args.workers)
            })?;
            print_summary(&report);
            Ok(())
        }
        Command::RunProbe { dimension, run: args } => {
            let suite = load_suite(&args.suite)?;
            if args.backend == BackendKind::Sabotaged {
                return Err(config_error("the sabotaged backend only applies to run-e2e"));
            }
            let report = with_source(&suite, &args, true, |source, repair, cfg| {
                runner::run_probe(&suite, dimension, cfg, source, repair, &args.run, args.workers)
            })?;
            print_summary(&report);
            Ok(())
        }
        Command::Score { suite, run } => {
            let suite = load_suite(&suite)?;
            let report = runner::score_dir(&suite, &run)?;
            print_summary(&report);
            Ok(())
        }
        Command::SerializeObs {
            mode,
            screen,
            screenshot,
            out,
        } => serialize_obs(mode, &screen, screenshot.as_deref(), out.as_deref()),
        Command::BuildUtg { suite } => build_utgs(&suite),
        Command::ValidateSuite { suite } => validate(&suite),
        Command::Report {
            suite,
            runs,
            format,
            out,
        } => {
            let suite = load_suite(&suite)?;
            let reports = runs
                .iter()
                .map(|r| runner::build_report(&suite, r))
                .collect::<Result<Vec<RunReport>, Error>>()?;
            let body = match format {
                Format::Radar => radar_csv(&reports),
                Format::Json if reports.len() == 1 => reports[0].to_json(),
                Format::Csv if reports.len() == 1 => reports[0].to_csv(),
                _ => return Err(config_error("json and csv output take exactly one --run")),
            };
            match out {
                Some(path) => std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?,
                None => print!("{body}"),
            }
            Ok(())
        }
    }
}

fn print_summary(report: &RunReport) {
    if let Some(e2e) = &report.e2e {
        let cell = |v: Option<f64>| v.map(fmt3).unwrap_or_else(|| "-".into());
        println!("SR {}", cell(e2e.overall.sr));
        println!("ACP {}", cell(e2e.overall.acp));
        for (category, agg) in &e2e.by_category {
            println!("{category}: SR {} ACP {} ({} tasks)", cell(agg.sr), cell(agg.acp), agg.tasks);
        }
    }
    let [_, gu, ak, pl, gr, inf, _] = report.radar_row();
    for (name, v) in [
        ("goal_understanding", gu),
        ("app_knowledge", ak),
        ("planning", pl),
        ("grounding", gr),
        ("instruction_following", inf),
    ] {
        if !v.is_empty() {
            println!("{name} {v}");
        }
    }
}

fn run_config(suite: &Suite, args: &RunArgs) -> RunConfig {
    let mut cfg = RunConfig::new(suite, args.backend.label());
    if let Some(m) = &args.model {
        cfg.model = m.clone();
    }
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(n) = args.max_steps {
        cfg.max_steps = n;
    }
    if let Some(p) = args.policy {
        cfg.policy = p;
    }
    if let Some(t) = args.temperature {
        cfg.temperature = t;
    }
    cfg.seed = args.seed;
    let http_involved = args.backend == BackendKind::Http || args.record == Some(BackendKind::Http);
    if http_involved {
        cfg.endpoint = Some(args.endpoint.clone().unwrap_or_else(|| HttpConfig::default().endpoint));
        cfg.api_key_env = args.api_key_env.clone();
    }
    cfg
}

/// Build a source that does not itself cache.
fn plain_source(
    kind: BackendKind,
    suite: &Suite,
    args: &RunArgs,
    probe: bool,
) -> Result<Box<dyn BackendSource>, Failure> {
    Ok(match kind {
        BackendKind::Oracle if probe => Box::new(runner::probe_oracle_book(suite)),
        BackendKind::Oracle => Box::new(runner::oracle_book(suite, false)),
        BackendKind::Sabotaged => Box::new(runner::oracle_book(suite, true)),
        BackendKind::Script => {
            let path = args.script.as_ref().ok_or_else(|| config_error("--script is required"))?;
            Box::new(runner::read_script(path)?)
        }
        BackendKind::Http => {
            let mut config = HttpConfig {
                api_key_env: args.api_key_env.clone(),
                ..Default::default()
            };
            if let Some(e) = &args.endpoint {
                config.endpoint = e.clone();
            }
            if let Some(n) = args.retries {
                config.max_attempts = n + 1;
            }
            if let Some(n) = args.max_concurrent {
                config.max_concurrent = n;
            }
            if let Some(ms) = args.min_interval_ms {
                config.min_interval = Duration::from_millis(ms);
            }
            Box::new(HttpChatBackend::new(config).map_err(config_error)?)
        }
        BackendKind::Cached => return Err(config_error("--record cannot be cached")),
    })
}

fn with_source<T>(
    suite: &Suite,
    args: &RunArgs,
    probe: bool,
    body: impl FnOnce(&dyn BackendSource, Option<&dyn BackendSource>, &RunConfig) -> Result<T, Error>,
) -> Result<T, Failure> {
    let cfg = run_config(suite, args);
    if args.backend != BackendKind::Cached {
        if args.record.is_some() {
            return Err(config_error("--record only applies to the cached backend"));
        }
        let source = plain_source(args.backend, suite, args, probe)?;
        return Ok(body(source.as_ref(), Some(source.as_ref()), &cfg)?);
    }
    let path = args.store.as_ref().ok_or_else(|| config_error("--store is required"))?;
    let store = Arc::new(ResponseStore::open(path)?);
    let delegate = args
        .record
        .map(|k| plain_source(k, suite, args, probe))
        .transpose()?;
    let source = CachedSource {
        store: store.clone(),
        delegate: delegate.as_deref(),
    };
    let out = body(&source, Some(&source), &cfg);
    if store.recorded() > 0 {
        store.compact().map_err(|e| Error::io(store.path(), e))?;
    }
    Ok(out?)
}

fn serialize_obs(mode: ObservationMode, screen: &Path, screenshot: Option<&Path>, out: Option<&Path>) -> Result<(), Failure> {
    let bytes = std::fs::read(screen).map_err(|e| Error::io(screen, e))?;
    let doc = load_screen(&bytes).map_err(|e| Error::from(e.in_file(screen)))?;
    let shot = if mode.needs_screenshot() {
        let path = match (screenshot, &doc.screenshot_ref) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(rel)) => screen.parent().unwrap_or(Path::new(".")).join(rel),
            (None, None) => return Err(config_error(format!("{mode} needs --screenshot"))),
        };
        Some(std::fs::read(&path).map_err(|e| Error::io(&path, e))?)
    } else {
        None
    };
    let obs = build_observation(mode, &doc, shot.as_deref()).map_err(Error::from)?;
    if let Some(text) = &obs.text_payload {
        println!("{text}");
    }
    if let Some(png) = &obs.image_payload {
        let out = out.ok_or_else(|| config_error(format!("{mode} needs --out for the image")))?;
        std::fs::write(out, png).map_err(|e| Error::io(out, e))?;
        for m in obs.marks.iter().flatten() {
            println!("[{}] {},{}", m.index, m.cx, m.cy);
        }
    }
    Ok(())
}

fn build_utgs(root: &Path) -> Result<(), Failure> {
    let suite = load_suite_with(root, LoadOptions { utgs: false })?;
    for app in suite.app_ids() {
        let rel = suite
            .manifest
            .apps
            .get(app)
            .ok_or_else(|| config_error(format!("app {app:?} has no graph path in the manifest")))?;
        let recordings: Vec<(String, &navbench::model::Trajectory)> = suite
            .tasks
            .iter()
            .filter(|t| t.task.app_id == app)
            .map(|t| (t.task.id.clone(), &t.reference))
            .collect();
        let utg = build_utg(app, &recordings).map_err(Error::from)?;
        let path = suite.root.join(rel);
        let body = to_versioned_pretty(&utg.to_file());
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        println!("{app}: {} states, {} edges", utg.states.len(), utg.edge_count());
    }
    Ok(())
}

fn validate(root: &Path) -> Result<(), Failure> {
    let suite = load_suite(root).map_err(|e| Failure {
        code: 1,
        message: e.to_string(),
    })?;
    let lints = lint(&suite);
    for l in &lints {
        println!("{}: {}", l.subject, l.message);
    }
    if lints.is_empty() {
        println!("ok: {} tasks, {} apps", suite.tasks.len(), suite.app_ids().len());
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            message: format!("{} problem(s) found", lints.len()),
        })
    }
}
