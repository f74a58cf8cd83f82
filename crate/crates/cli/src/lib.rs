//! `cgmqa` subcommands. [`run`] takes explicit output and input streams so
//! the commands can be driven in-process.

pub mod config;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{anyhow, bail, Context};
use chrono::{NaiveDate, NaiveDateTime};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use cgmqa_core::agent::{
    HttpBackend, HttpConfig, LlmBackend, LocalBackend, Pipeline, PipelineConfig, PromptSet, ScriptedBackend, Trace,
    UserQuery,
};
use cgmqa_core::benchgen::{
    aligned_script, default_templates, instantiate_templates, load_templates, read_benchmark, read_runs,
    run_benchmark, write_benchmark, write_runs, GenerationConfig, Mix,
};
use cgmqa_core::data::{parse_timestamp, synthesize_series, CsvSchema, SynthSpec};
use cgmqa_core::evaluator::{compare_judges, evaluate, judge_item, match_calls, AliasTable, EvalOptions, LayerSelection};
use cgmqa_core::privacy::scan_text;
use cgmqa_core::sandbox::{cgm_registry, LocalData, SandboxConfig};
use cgmqa_core::temporal::TemporalResolver;
use cgmqa_service::{router, router_with_ui, AppState, Clock, IngestSummary, Router, SubjectStore};

pub use config::Config;

#[derive(Debug, Parser)]
#[command(name = "cgmqa", version, about = "Private question answering over CGM data")]
pub struct Cli {
    /// TOML file with defaults for the flags below.
    #[arg(long, global = true, env = "CGMQA_CONFIG")]
    pub config: Option<PathBuf>,
    /// Subject store directory.
    #[arg(long, global = true, env = "CGMQA_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Import a CGM export into the subject store.
    Ingest(IngestArgs),
    /// Write a deterministic synthetic subject into the store.
    Synth(SynthArgs),
    /// Ask one question about a stored subject.
    Ask(AskArgs),
    /// Instantiate question templates into a benchmark file.
    BenchGenerate(GenerateArgs),
    /// Run every benchmark item through the pipeline.
    BenchRun(RunArgs),
    /// Score a run file against its benchmark.
    Eval(EvalArgs),
    /// Serve the HTTP API (and optionally the chat client) on loopback.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Rules from a JSON script file.
    Scripted,
    /// Per-item scripts reproducing each benchmark item's procedure.
    Aligned,
    /// Offline rule-based backend.
    Local,
    /// OpenAI-compatible endpoint from the `CGMQA_*` environment variables.
    Http,
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Script for `--backend scripted`.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Directory overriding the default layer prompts.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    pub csv: PathBuf,
    #[arg(long)]
    pub subject: String,
    #[arg(long)]
    pub timestamp_column: Option<String>,
    #[arg(long)]
    pub glucose_column: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub subject: String,
    #[arg(long)]
    pub start: NaiveDate,
    #[arg(long, default_value_t = 14)]
    pub days: u32,
    #[arg(long, default_value_t = 5)]
    pub rate: u32,
    #[arg(long, default_value_t = 140.0)]
    pub level: f64,
    #[arg(long, default_value_t = 35.0)]
    pub variability: f64,
    /// Zero-based day indices left empty.
    #[arg(long, value_delimiter = ',')]
    pub missing_days: Vec<u32>,
    #[arg(long, default_value_t = 0.0)]
    pub missing_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AskArgs {
    #[arg(long)]
    pub subject: String,
    pub question: String,
    /// Reference time for relative dates, `YYYY-MM-DD HH:MM`; defaults to now.
    #[arg(long)]
    pub reference: Option<String>,
    /// Allow one clarification question, answered on standard input.
    #[arg(long)]
    pub interactive: bool,
    /// Skip the input processor and send the raw question to the router.
    #[arg(long)]
    pub no_input_processor: bool,
    /// Where to write the trace; defaults under `<data-dir>/traces`.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Template library; the bundled one when omitted.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Subjects to draw from; every stored subject when omitted.
    #[arg(long, value_delimiter = ',')]
    pub subjects: Vec<String>,
    #[arg(short, long)]
    pub n: usize,
    /// `standard` or `template=0.5,direct=0.2,...`.
    #[arg(long, default_value = "standard")]
    pub mix: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub inject_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub benchmark: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Store full traces (prompts and replies) in the run file.
    #[arg(long)]
    pub keep_traces: bool,
    /// Answer clarification questions with a simulated user.
    #[arg(long)]
    pub interactive: bool,
    #[arg(long)]
    pub no_input_processor: bool,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub benchmark: PathBuf,
    #[arg(long)]
    pub runs: PathBuf,
    #[arg(long, default_value = "all")]
    pub layer: LayerSelection,
    #[arg(long)]
    pub readability: bool,
    #[arg(long)]
    pub latency: bool,
    /// Extra feature aliases as `{canonical: [alias, ...]}`.
    #[arg(long)]
    pub aliases: Option<PathBuf>,
    /// Write the full report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Also score with a model judge and report its agreement.
    #[arg(long, value_enum)]
    pub judge: Option<BackendKind>,
    #[arg(long)]
    pub judge_script: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    /// Static chat client directory.
    #[arg(long)]
    pub ui: Option<PathBuf>,
    /// Fixed reference time instead of the wall clock.
    #[arg(long)]
    pub reference: Option<String>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

/// Resolved settings shared by every command.
struct Settings {
    config: Config,
    data_dir: Option<PathBuf>,
}

impl Settings {
    fn new(cli_config: Option<&Path>, data_dir: Option<PathBuf>) -> anyhow::Result<Self> {
        let config = match cli_config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        let data_dir = data_dir.or_else(|| config.data_dir.clone());
        Ok(Self { config, data_dir })
    }

    fn data_dir(&self) -> anyhow::Result<&Path> {
        self.data_dir.as_deref().ok_or_else(|| anyhow!("no data directory: pass --data-dir"))
    }

    fn store(&self) -> anyhow::Result<SubjectStore> {
        Ok(SubjectStore::open(self.data_dir()?)?)
    }

    fn resolver(&self) -> TemporalResolver {
        TemporalResolver::new(self.config.vague_table())
    }

    fn prompts(&self, args: &BackendArgs) -> anyhow::Result<PromptSet> {
        match args.prompts.as_ref().or(self.config.prompts_dir.as_ref()) {
            Some(dir) => PromptSet::load_dir(dir).with_context(|| format!("loading prompts from {}", dir.display())),
            None => Ok(PromptSet::default()),
        }
    }

    fn backend_kind(&self, args: &BackendArgs) -> BackendKind {
        args.backend.or(self.config.backend).unwrap_or(BackendKind::Local)
    }

    /// A single backend for every question; `aligned` needs benchmark items.
    fn backend(&self, kind: BackendKind, script: Option<&Path>) -> anyhow::Result<Arc<dyn LlmBackend>> {
        Ok(match kind {
            BackendKind::Local => Arc::new(LocalBackend::new(self.resolver())),
            BackendKind::Scripted => {
                let path = script
                    .or(self.config.script.as_deref())
                    .ok_or_else(|| anyhow!("--backend scripted needs --script"))?;
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Arc::new(ScriptedBackend::from_json(&text).with_context(|| format!("parsing {}", path.display()))?)
            }
            BackendKind::Http => Arc::new(HttpBackend::new(HttpConfig::from_env()?)?),
            BackendKind::Aligned => bail!("the aligned backend only works with bench-run"),
        })
    }
}

fn registry() -> Arc<cgmqa_core::sandbox::ToolRegistry> {
    Arc::new(cgm_registry(SandboxConfig::default()))
}

fn parse_reference(s: Option<&str>) -> anyhow::Result<Option<NaiveDateTime>> {
    s.map(|s| {
        parse_timestamp(s)
            .or_else(|| s.parse::<NaiveDate>().ok().and_then(|d| d.and_hms_opt(21, 0, 0)))
            .ok_or_else(|| anyhow!("bad reference time `{s}`"))
    })
    .transpose()
}

fn print_summary(out: &mut dyn Write, s: &IngestSummary) -> anyhow::Result<()> {
    if s.replaced {
        writeln!(out, "warning: replaced existing subject `{}`", s.subject_id)?;
    }
    writeln!(
        out,
        "subject {}: {} rows, {} to {}, rate {} min, missing {:.1}%",
        s.subject_id,
        s.rows,
        s.first.format("%Y-%m-%d %H:%M"),
        s.last.format("%Y-%m-%d %H:%M"),
        s.rate_minutes,
        s.missing_pct
    )?;
    if s.dropped_rows + s.duplicate_rows > 0 {
        writeln!(out, "skipped {} invalid and {} duplicate rows", s.dropped_rows, s.duplicate_rows)?;
    }
    Ok(())
}

pub fn run(cli: Cli, out: &mut (dyn Write + Send), input: &mut (dyn BufRead + Send)) -> anyhow::Result<()> {
    let ctx = Settings::new(cli.config.as_deref(), cli.data_dir)?;
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&ctx, a, out),
        Command::Synth(a) => cmd_synth(&ctx, a, out),
        Command::Ask(a) => cmd_ask(&ctx, a, out, input),
        Command::BenchGenerate(a) => cmd_bench_generate(&ctx, a, out),
        Command::BenchRun(a) => cmd_bench_run(&ctx, a, out),
        Command::Eval(a) => cmd_eval(&ctx, a, out),
        Command::Serve(a) => {
            let (app, addr) = ctx.build_service(a)?;
            writeln!(out, "listening on http://{addr}")?;
            out.flush()?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(cgmqa_service::serve(app, addr, cgmqa_service::ctrl_c()))?;
            writeln!(out, "stopped")?;
            Ok(())
        }
    }
}

fn cmd_ingest(ctx: &Settings, a: IngestArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let store = SubjectStore::create(ctx.data_dir()?)?;
    let schema = CsvSchema {
        timestamp_column: a.timestamp_column,
        glucose_column: a.glucose_column,
        subject_id: None,
    };
    let summary = store.ingest(&a.csv, &a.subject, &schema)?;
    print_summary(out, &summary)
}

fn cmd_synth(ctx: &Settings, a: SynthArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let store = SubjectStore::create(ctx.data_dir()?)?;
    let spec = SynthSpec {
        subject_id: a.subject.clone(),
        start_date: a.start,
        days: a.days,
        rate_minutes: a.rate,
        base_level: a.level,
        variability: a.variability,
        missing_days: a.missing_days,
        missing_sample_fraction: a.missing_fraction,
        seed: a.seed,
    };
    let series = synthesize_series::<f64>(&spec)?;
    let path = store.path(&a.subject)?;
    store.save(&a.subject, &series)?;
    let summary = store.ingest(&path, &a.subject, &CsvSchema::default())?;
    print_summary(out, &IngestSummary { replaced: false, ..summary })
}

fn write_trace(path: &Path, trace: &Trace) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(trace)?).with_context(|| format!("writing {}", path.display()))
}

fn cmd_ask(
    ctx: &Settings,
    a: AskArgs,
    out: &mut (dyn Write + Send),
    input: &mut (dyn BufRead + Send),
) -> anyhow::Result<()> {
    let store = ctx.store()?;
    let series = store.load(&a.subject)?;
    let backend = ctx.backend(ctx.backend_kind(&a.backend), a.backend.script.as_deref())?;
    let config = PipelineConfig {
        interactive: a.interactive,
        use_input_processor: !a.no_input_processor,
        ..Default::default()
    };
    let pipeline = Pipeline::new(backend, registry(), Arc::new(LocalData::new(series)))
        .with_config(config)
        .with_prompts(ctx.prompts(&a.backend)?);
    let reference = parse_reference(a.reference.as_deref())?.unwrap_or_else(|| chrono::Local::now().naive_local());
    let query = UserQuery::new(a.question, reference);
    let trace_path = a.trace_out.unwrap_or_else(|| {
        ctx.data_dir()
            .unwrap_or(Path::new("."))
            .join("traces")
            .join(format!("ask-{}.json", chrono::Local::now().format("%Y%m%d-%H%M%S")))
    });

    let io = Mutex::new((out, input));
    let responder = |question: &str| {
        let mut guard = io.lock().ok()?;
        let (out, input) = &mut *guard;
        writeln!(out, "clarify: {question}").ok()?;
        write!(out, "> ").ok()?;
        out.flush().ok()?;
        let mut line = String::new();
        input.read_line(&mut line).ok()?;
        let line = line.trim();
        (!line.is_empty()).then(|| line.to_string())
    };
    let result = pipeline.ask(&query, &responder);
    let (out, _) = io.into_inner().map_err(|_| anyhow!("output lock poisoned"))?;
    match result {
        Ok(bundle) => {
            write_trace(&trace_path, &bundle.trace)?;
            writeln!(out, "{}", bundle.response.text)?;
            if let Some(p) = &bundle.response.cited_period {
                writeln!(out, "period: {p}")?;
            }
            if bundle.response.is_refusal {
                writeln!(out, "refused: no tools were run")?;
            }
            writeln!(out, "tools: {}", bundle.trace.num_tool_calls())?;
            writeln!(out, "trace: {}", trace_path.display())?;
            Ok(())
        }
        Err(failure) => {
            write_trace(&trace_path, &failure.trace)?;
            writeln!(out, "trace: {}", trace_path.display())?;
            Err(anyhow!(failure))
        }
    }
}

fn load_subjects(store: &SubjectStore, ids: &[String]) -> anyhow::Result<BTreeMap<String, Arc<LocalData>>> {
    if ids.is_empty() {
        return Ok(store.load_all()?);
    }
    ids.iter()
        .map(|id| Ok((id.clone(), Arc::new(LocalData::new(store.load(id)?)))))
        .collect()
}

fn cmd_bench_generate(ctx: &Settings, a: GenerateArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let store = ctx.store()?;
    let subjects: Vec<Arc<LocalData>> = load_subjects(&store, &a.subjects)?.into_values().collect();
    let templates = match &a.templates {
        Some(p) => load_templates(p)?,
        None => default_templates(),
    };
    let mix: Mix = a.mix.parse()?;
    let mut config = GenerationConfig::new(a.n, mix, a.seed);
    config.inject_fraction = a.inject_fraction;
    config.jobs = a.jobs;
    let items = instantiate_templates(&templates, &subjects, &registry(), &config)?;
    write_benchmark(&items, &a.out)?;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for item in &items {
        *counts.entry(item.category.to_string()).or_default() += 1;
    }
    let parts: Vec<String> = counts.iter().map(|(c, n)| format!("{c} {n}")).collect();
    writeln!(out, "wrote {} items to {} ({})", items.len(), a.out.display(), parts.join(", "))?;
    Ok(())
}

fn cmd_bench_run(ctx: &Settings, a: RunArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let store = ctx.store()?;
    let items = read_benchmark(&a.benchmark)?;
    let mut ids: Vec<String> = items.iter().map(|i| i.subject_id.clone()).collect();
    ids.sort();
    ids.dedup();
    // subjects missing from the store are recorded per item, not fatal
    let subjects: BTreeMap<String, Arc<LocalData>> = ids
        .iter()
        .filter_map(|id| store.load(id).ok().map(|s| (id.clone(), Arc::new(LocalData::new(s)))))
        .collect();
    let config = PipelineConfig {
        interactive: a.interactive,
        use_input_processor: !a.no_input_processor,
        ..Default::default()
    };
    let kind = ctx.backend_kind(&a.backend);
    let shared = match kind {
        BackendKind::Aligned => None,
        k => Some(ctx.backend(k, a.backend.script.as_deref())?),
    };
    let make = |item: &cgmqa_core::benchgen::BenchmarkItem| -> Arc<dyn LlmBackend> {
        match &shared {
            Some(b) => b.clone(),
            None => Arc::new(aligned_script(item)),
        }
    };
    let records = run_benchmark(&items, &subjects, registry(), make, &config, a.jobs, a.keep_traces);
    let file = std::fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_runs(&records, std::io::BufWriter::new(file))?;

    let failed: Vec<_> = records.iter().filter(|r| !r.ok).collect();
    writeln!(
        out,
        "ran {} items: {} ok, {} failed; runs written to {}",
        records.len(),
        records.len() - failed.len(),
        failed.len(),
        a.out.display()
    )?;
    for r in &failed {
        let layer = r.error_layer.map(|l| l.to_string()).unwrap_or_else(|| "setup".into());
        writeln!(out, "  {} [{layer}] {}", r.item_id, r.error.as_deref().unwrap_or(""))?;
    }
    if a.keep_traces {
        let leaks: usize = records
            .iter()
            .filter_map(|r| Some((r.trace.as_ref()?, subjects.get(&r.subject_id)?)))
            .map(|(t, d)| scan_text(&t.prompt_text(), d.cgm.readings()).len())
            .sum();
        writeln!(out, "privacy: {leaks} raw readings found in backend prompts")?;
    }
    Ok(())
}

fn cmd_eval(ctx: &Settings, a: EvalArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let items = read_benchmark(&a.benchmark)?;
    let file = std::fs::File::open(&a.runs).with_context(|| format!("opening {}", a.runs.display()))?;
    let runs = read_runs(std::io::BufReader::new(file))?;
    let known: std::collections::BTreeSet<&str> = items.iter().map(|i| i.id.as_str()).collect();
    let unknown: Vec<&str> = runs.iter().map(|r| r.item_id.as_str()).filter(|id| !known.contains(id)).collect();
    if !unknown.is_empty() {
        bail!("runs reference items missing from the benchmark: {}", unknown.join(", "));
    }
    let mut aliases = AliasTable::default();
    if let Some(p) = &a.aliases {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        aliases.extend_from_json(&text).map_err(|e| anyhow!("{}: {e}", p.display()))?;
    }
    let options = EvalOptions {
        layer: a.layer,
        readability: a.readability,
        latency: a.latency,
    };
    let report = evaluate(&items, &runs, &options, &aliases);
    write!(out, "{}", report.to_table())?;

    if let Some(kind) = a.judge {
        let judge = ctx.backend(kind, a.judge_script.as_deref())?;
        let prompts = PromptSet::default();
        let by_id: BTreeMap<&str, _> = runs.iter().map(|r| (r.item_id.as_str(), r)).collect();
        let (mut ids, mut ours, mut theirs) = (Vec::new(), Vec::new(), Vec::new());
        for item in items.iter().filter(|i| i.is_answerable) {
            let Some(run) = by_id.get(item.id.as_str()) else { continue };
            match judge_item(judge.as_ref(), &prompts, item, &run.payload) {
                Ok(r) => {
                    ids.push(item.id.clone());
                    ours.push(match_calls(item, &run.payload, &aliases));
                    theirs.push(r);
                }
                Err(e) => writeln!(out, "judge failed on {}: {e}", item.id)?,
            }
        }
        let agreement = compare_judges(&ids, &ours, &theirs);
        writeln!(
            out,
            "judge agreement over {} items: MAE precision {:.4}, recall {:.4}, value accuracy {:.4}",
            ids.len(),
            agreement.mae_precision,
            agreement.mae_recall,
            agreement.mae_value_accuracy
        )?;
    }
    if let Some(p) = &a.json {
        std::fs::write(p, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

/// Router and bind address for `serve`; fails on a bad data or UI directory.
pub fn build_service(config: Option<&Path>, data_dir: Option<PathBuf>, a: ServeArgs) -> anyhow::Result<(Router, SocketAddr)> {
    let ctx = Settings::new(config, data_dir)?;
    ctx.build_service(a)
}

impl Settings {
    fn build_service(&self, a: ServeArgs) -> anyhow::Result<(Router, SocketAddr)> {
        let store = self.store()?;
        let subjects = store.load_all()?;
        let backend = self.backend(self.backend_kind(&a.backend), a.backend.script.as_deref())?;
        let mut state = AppState::new(subjects, registry(), backend).with_prompts(self.prompts(&a.backend)?);
        if let Some(t) = parse_reference(a.reference.as_deref())? {
            state = state.with_clock(Clock::Fixed(t));
        }
        let state = Arc::new(state);
        let app = match a.ui.or_else(|| self.config.ui_dir.clone()) {
            Some(dir) => router_with_ui(state, dir)?,
            None => router(state),
        };
        let host = a.host.or_else(|| self.config.host.clone()).unwrap_or_else(|| "127.0.0.1".into());
        let port = a.port.or(self.config.port).unwrap_or(8000);
        let addr: SocketAddr = format!("{host}:{port}")
            .parse()
            .with_context(|| format!("bad listen address `{host}:{port}`"))?;
        Ok((app, addr))
    }
}
