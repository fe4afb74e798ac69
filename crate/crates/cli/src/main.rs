//! `polynorm`: evaluate, score, curate and review text normalization runs.
//!
//! Exit codes: 0 clean, 1 usage or configuration error, 2 the command
//! finished but some items failed.

mod config;
mod render;

use std::fs;
use std::io::Write as _;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use polynorm_core::baseline::{normalize_sentence, Baseline};
use polynorm_core::dataset::{curate_candidates, gate_dataset, load_dataset, Dataset, FileFormat};
use polynorm_core::eval::{read_report, read_samples, run_eval, EvalPlan, SystemSpec};
use polynorm_core::hillclimb::{cluster_errors, compare_runs, IterationStore};
use polynorm_core::metrics::{canonicalize, score_pair, BleuStats, ScoringOptions};
use polynorm_core::model::{parse_category, parse_locale};
use polynorm_core::prompting::{IclSelection, IclStore, InstructionTemplate};
use polynorm_core::reporting::{diff_sample, rate_label, render_report, ReportFormat};
use polynorm_core::{Exact, Locale};
use polynorm_review::{ServiceConfig, TOKEN_HEADER};

use crate::config::Config;

/// Environment variable holding the optional review-service token.
const TOKEN_ENV: &str = "POLYNORM_REVIEW_TOKEN";
const BASELINE: &str = Baseline::SYSTEM_ID;

#[derive(Parser)]
#[command(name = "polynorm", version, about = "Multilingual text normalization workbench")]
struct Cli {
    /// TOML file with provider settings and defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Locale tag such as en-US or ja-JP.
    #[arg(long, global = true)]
    locale: Option<String>,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a dataset with a model or the baseline, then score and record the run.
    Eval(EvalArgs),
    /// Run the rule-based normalizer over a file, one sentence per line.
    Baseline(BaselineArgs),
    /// Score line-aligned reference and hypothesis files.
    Score(ScoreArgs),
    /// Generate candidate samples, or check a dataset file with --check.
    Curate(CurateArgs),
    /// Print a run report, optionally compared against another run.
    Report(ReportArgs),
    /// Show per-sample differences with the edit regions marked.
    Diff(DiffArgs),
    /// Serve the review API (and UI, if built) over a runs directory.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SystemArgs {
    /// Provider name from the config, a model id, or "baseline".
    #[arg(long)]
    provider: Option<String>,
    /// Answer requests from this cassette only; no network.
    #[arg(long, conflicts_with = "record")]
    replay: Option<PathBuf>,
    /// Call the provider and append responses to this cassette.
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// ICL example store (TSV or JSONL). Not needed for the baseline.
    #[arg(long)]
    icl: Option<PathBuf>,
    #[command(flatten)]
    system: SystemArgs,
    /// Runs directory; the run is written to <out>/<run-id>/.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    parent: Option<String>,
    #[arg(long)]
    iteration: Option<u32>,
    /// Use only the first N examples of the locale's ICL list.
    #[arg(long)]
    icl_count: Option<usize>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Instruction template file; the built-in one is used otherwise.
    #[arg(long)]
    instruction: Option<PathBuf>,
    /// Fix the run timestamp to the epoch so reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    hyp: PathBuf,
}

#[derive(Args)]
struct CurateArgs {
    /// Check a dataset file for malformed rows and category coverage.
    #[arg(long, conflicts_with_all = ["category", "n"])]
    check: Option<PathBuf>,
    /// Rows expected per category for --check.
    #[arg(long, default_value_t = 20)]
    expected: usize,
    #[arg(long, required_unless_present = "check")]
    category: Option<String>,
    #[arg(long, required_unless_present = "check")]
    n: Option<usize>,
    #[command(flatten)]
    system: SystemArgs,
    /// Candidate TSV; defaults to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// A run directory, or a run id inside --runs.
    run: String,
    #[arg(long, default_value = "runs")]
    runs: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    run: RunArgs,
    /// md, json or tsv.
    #[arg(long, default_value = "md")]
    format: String,
    /// Baseline run to compare against (deltas are this run minus it).
    #[arg(long)]
    compare: Option<String>,
    /// Show the K categories with the most edits.
    #[arg(long, value_name = "K")]
    clusters: Option<usize>,
}

#[derive(Args)]
struct DiffArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    sample: Option<String>,
    #[arg(long)]
    category: Option<String>,
    #[arg(long)]
    only_errors: bool,
    /// One JSON diff record per line.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Initial ICL store for the editor.
    #[arg(long)]
    icl: Option<PathBuf>,
    /// Dataset used by reruns, as LOCALE=PATH. Repeatable.
    #[arg(long = "dataset", value_name = "LOCALE=PATH")]
    datasets: Vec<String>,
    /// Built review UI to serve at /.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
}

enum Outcome {
    Clean,
    ItemErrors(usize),
}

struct Ctx {
    config: Config,
    locale: Option<String>,
}

impl Ctx {
    /// Flag, then config default, then `fallback`.
    fn locale(&self, fallback: impl FnOnce() -> anyhow::Result<String>) -> anyhow::Result<Locale> {
        let tag = match (&self.locale, &self.config.defaults.locale) {
            (Some(t), _) | (None, Some(t)) => t.clone(),
            (None, None) => fallback()?,
        };
        parse_locale(&tag).map_err(|e| anyhow!("{e}"))
    }

    fn system(&self, args: &SystemArgs) -> anyhow::Result<(String, SystemSpec)> {
        let name = args
            .provider
            .clone()
            .or_else(|| self.config.defaults.provider.clone())
            .ok_or_else(|| anyhow!("no provider given (use --provider NAME or set defaults.provider)"))?;
        if name == BASELINE {
            if args.replay.is_some() || args.record.is_some() {
                bail!("--replay/--record do not apply to the baseline");
            }
            return Ok((name, SystemSpec::Baseline));
        }
        let cfg = self.config.provider(&name);
        let spec = match (&args.replay, &args.record) {
            (Some(p), _) => SystemSpec::Replay(cfg, p.clone()),
            (None, Some(p)) => SystemSpec::Record(cfg, p.clone()),
            (None, None) => match self.config.providers.get(&name) {
                Some(entry) => entry.spec(),
                None => SystemSpec::Live(cfg),
            },
        };
        Ok((name, spec))
    }
}

/// The locale of the first record of a dataset file.
fn sniff_locale(path: &Path) -> anyhow::Result<String> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let line = text.lines().find(|l| !l.trim().is_empty()).ok_or_else(|| anyhow!("{} is empty; pass --locale", path.display()))?;
    let tag = match FileFormat::from_path(path) {
        FileFormat::Tsv => line.split('\t').nth(1).map(str::to_string),
        FileFormat::Jsonl => serde_json::from_str::<serde_json::Value>(line)
            .ok()
            .and_then(|v| v.get("locale").and_then(|l| l.as_str()).map(str::to_string)),
    };
    tag.ok_or_else(|| anyhow!("cannot tell the locale of {}; pass --locale", path.display()))
}

fn write_output(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => std::io::stdout().write_all(text.as_bytes()).context("cannot write to standard output"),
    }
}

fn eval(ctx: &Ctx, args: EvalArgs) -> anyhow::Result<Outcome> {
    let d = &ctx.config.defaults;
    let dataset_path = args.dataset.or_else(|| d.dataset.clone()).ok_or_else(|| anyhow!("--dataset is required"))?;
    let locale = ctx.locale(|| sniff_locale(&dataset_path))?;
    let dataset = load_dataset(&dataset_path, &locale)?;
    let (name, spec) = ctx.system(&args.system)?;
    let icl = match args.icl.or_else(|| d.icl.clone()) {
        Some(p) => IclStore::load(&p)?,
        None if name == BASELINE => IclStore::new([]),
        None => bail!("--icl is required for model providers"),
    };
    let template = match args.instruction.or_else(|| d.instruction.clone()) {
        Some(p) => InstructionTemplate::load(&p)?,
        None => InstructionTemplate::default(),
    };
    let out = args.out.or_else(|| d.out.clone()).unwrap_or_else(|| PathBuf::from("runs"));
    let store = IterationStore::open(&out)?;
    let created_at = if args.deterministic { DateTime::<Utc>::UNIX_EPOCH } else { Utc::now() };
    let plan = EvalPlan {
        dataset,
        icl,
        template,
        selection: args.icl_count.map_or(IclSelection::All, IclSelection::Take),
        system: spec.build()?,
        parallelism: args.parallelism.or(d.parallelism).unwrap_or(4).max(1),
        parent_run_id: args.parent,
        iteration: args.iteration,
        created_at,
    };
    let outcome = run_eval(&plan, &store)?;
    let report = &outcome.record.report;
    println!("run {} -> {}", outcome.record.run_id, outcome.run_dir.display());
    println!(
        "{}: {:.2}%  BLEU: {:.2}%  ({} samples, {} item errors)",
        rate_label(&locale),
        report.overall_rate * 100.0,
        report.overall_bleu * 100.0,
        outcome.scored.len(),
        outcome.item_errors.len()
    );
    for e in &outcome.item_errors {
        eprintln!("item error {}: {}", e.sample_id, e.message);
    }
    Ok(if outcome.item_errors.is_empty() { Outcome::Clean } else { Outcome::ItemErrors(outcome.item_errors.len()) })
}

fn baseline(ctx: &Ctx, args: BaselineArgs) -> anyhow::Result<Outcome> {
    let locale = ctx.locale(|| Ok("en-US".into()))?;
    Baseline::new(&locale)?;
    let text = fs::read_to_string(&args.input).with_context(|| format!("cannot read {}", args.input.display()))?;
    let mut out = String::with_capacity(text.len() * 2);
    for line in text.lines() {
        out.push_str(&normalize_sentence(line));
        out.push('\n');
    }
    write_output(args.out.as_deref(), &out)?;
    Ok(Outcome::Clean)
}

fn read_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l).to_string()).collect())
}

/// Corpus scores: total edits over total reference tokens, and corpus BLEU.
struct CorpusScore {
    edits: usize,
    ref_len: usize,
    bleu: BleuStats,
}

fn score_lines(refs: &[String], hyps: &[String], locale: &Locale) -> anyhow::Result<CorpusScore> {
    let options = ScoringOptions::for_locale(locale);
    let mut total = CorpusScore { edits: 0, ref_len: 0, bleu: BleuStats::default() };
    for (i, (r, h)) in refs.iter().zip(hyps).enumerate() {
        let pair = score_pair::<Exact>(&canonicalize(r, locale), &canonicalize(h, locale), options)
            .with_context(|| format!("line {}", i + 1))?;
        total.edits += pair.alignment.distance();
        total.ref_len += pair.metric.ref_len;
        total.bleu = total.bleu + pair.bleu_stats;
    }
    Ok(total)
}

fn score(ctx: &Ctx, args: ScoreArgs) -> anyhow::Result<Outcome> {
    let locale = ctx.locale(|| Ok("en-US".into()))?;
    let refs = read_lines(&args.reference)?;
    let hyps = read_lines(&args.hyp)?;
    if refs.len() != hyps.len() {
        bail!(
            "{} has {} lines but {} has {}",
            args.reference.display(),
            refs.len(),
            args.hyp.display(),
            hyps.len()
        );
    }
    if refs.is_empty() {
        bail!("{} is empty", args.reference.display());
    }
    let s = score_lines(&refs, &hyps, &locale)?;
    println!(
        "{}: {:.2}%  BLEU: {:.2}%",
        rate_label(&locale),
        s.edits as f64 / s.ref_len as f64 * 100.0,
        s.bleu.score::<f64>() * 100.0
    );
    Ok(Outcome::Clean)
}

fn curate(ctx: &Ctx, args: CurateArgs) -> anyhow::Result<Outcome> {
    if let Some(path) = &args.check {
        let locale = ctx.locale(|| sniff_locale(path))?;
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let report = gate_dataset(&text, FileFormat::from_path(path), &locale, args.expected);
        for issue in &report.issues {
            println!("{}: {issue}", path.display());
        }
        println!(
            "{} rows, {} categories off the expected {} per category",
            report.coverage.total,
            report.coverage.missing_categories.len(),
            args.expected
        );
        if !report.passed() {
            bail!("{} failed the dataset check with {} issue(s)", path.display(), report.issues.len());
        }
        return Ok(Outcome::Clean);
    }
    let locale = ctx.locale(|| Ok("en-US".into()))?;
    let category = parse_category(args.category.as_deref().unwrap_or_default()).map_err(|e| anyhow!("{e}"))?;
    let n = args.n.unwrap_or_default();
    let (name, spec) = ctx.system(&args.system)?;
    let client = match spec.build()? {
        polynorm_core::eval::System::Llm(client) => client,
        polynorm_core::eval::System::Baseline => bail!("curation needs a model provider, not {name}"),
    };
    let samples = curate_candidates(&locale, category, n, &client)?;
    let dataset = Dataset { locale, samples, source_path: String::new() };
    write_output(args.out.as_deref(), &dataset.to_tsv()?)?;
    eprintln!("{} candidate(s) for review", dataset.len());
    Ok(Outcome::Clean)
}

fn run_dir(args: &RunArgs, run: &str) -> anyhow::Result<PathBuf> {
    let direct = PathBuf::from(run);
    if direct.join("report.json").is_file() {
        return Ok(direct);
    }
    let nested = args.runs.join(run);
    if nested.join("report.json").is_file() {
        return Ok(nested);
    }
    bail!("no run {run} (looked for {} and {})", direct.display(), nested.display())
}

fn report(args: ReportArgs) -> anyhow::Result<Outcome> {
    let format: ReportFormat = args.format.parse()?;
    let dir = run_dir(&args.run, &args.run.run)?;
    let report = read_report(&dir)?;
    let mut out = render_report(&report, format);
    if let Some(base) = &args.compare {
        let before = read_report(&run_dir(&args.run, base)?)?;
        let cmp = compare_runs(&before, &report)?;
        out.push('\n');
        out.push_str(&render::comparison(&cmp, rate_label(&report.config.locale)));
    }
    if let Some(k) = args.clusters {
        let clusters = cluster_errors(&read_samples(&dir)?, k)?;
        out.push('\n');
        out.push_str(&render::clusters(&clusters));
    }
    write_output(None, &out)?;
    Ok(Outcome::Clean)
}

fn diff(args: DiffArgs) -> anyhow::Result<Outcome> {
    let dir = run_dir(&args.run, &args.run.run)?;
    let category = args.category.as_deref().map(parse_category).transpose().map_err(|e| anyhow!("{e}"))?;
    let label = rate_label(&read_report(&dir)?.config.locale);
    let mut out = String::new();
    let mut shown = 0;
    for s in read_samples(&dir)? {
        if args.sample.as_ref().is_some_and(|id| &s.sample.id != id)
            || category.is_some_and(|c| s.sample.category != c)
            || (args.only_errors && !s.is_error())
        {
            continue;
        }
        let record = diff_sample(&s);
        if args.json {
            out.push_str(&serde_json::to_string(&record)?);
            out.push('\n');
        } else {
            out.push_str(&render::diff(&record, label));
        }
        shown += 1;
    }
    if let Some(id) = &args.sample {
        if shown == 0 {
            bail!("run has no sample {id}");
        }
    }
    write_output(None, &out)?;
    Ok(Outcome::Clean)
}

fn serve(ctx: &Ctx, args: ServeArgs) -> anyhow::Result<Outcome> {
    if !args.runs.is_dir() {
        bail!("runs directory {} does not exist", args.runs.display());
    }
    let d = &ctx.config.defaults;
    let icl = match args.icl.or_else(|| d.icl.clone()) {
        Some(p) => IclStore::load(&p)?,
        None => IclStore::new([]),
    };
    let mut datasets = std::collections::BTreeMap::new();
    let pairs = ctx.config.datasets.iter().map(|(k, v)| (k.clone(), v.clone()));
    let flags = args.datasets.iter().map(|s| {
        s.split_once('=')
            .map(|(k, v)| (k.to_string(), PathBuf::from(v)))
            .ok_or_else(|| anyhow!("--dataset expects LOCALE=PATH, got {s:?}"))
    });
    for pair in pairs.map(Ok).chain(flags) {
        let (tag, path) = pair?;
        datasets.insert(parse_locale(&tag).map_err(|e| anyhow!("{e}"))?, path);
    }
    let mut providers: std::collections::BTreeMap<String, SystemSpec> =
        ctx.config.providers.iter().map(|(k, v)| (k.clone(), v.spec())).collect();
    providers.insert(BASELINE.to_string(), SystemSpec::Baseline);
    let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
    if token.is_some() {
        log::info!("requests must carry the {TOKEN_HEADER} header");
    }
    let config = ServiceConfig {
        runs_dir: args.runs,
        icl,
        datasets,
        providers,
        static_dir: args.static_dir.or_else(|| d.static_dir.clone()),
        token,
        parallelism: args.parallelism.max(1),
    };
    let addr = SocketAddr::new(args.host, args.port.or(d.port).unwrap_or(8080));
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    eprintln!("serving {} on http://{addr}", config.runs_dir.display());
    runtime.block_on(polynorm_review::serve(&config, addr))?;
    Ok(Outcome::Clean)
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let ctx = Ctx { config, locale: cli.locale };
    match cli.command {
        Command::Eval(a) => eval(&ctx, a),
        Command::Baseline(a) => baseline(&ctx, a),
        Command::Score(a) => score(&ctx, a),
        Command::Curate(a) => curate(&ctx, a),
        Command::Report(a) => report(a),
        Command::Diff(a) => diff(a),
        Command::Serve(a) => serve(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::ItemErrors(n)) => {
            eprintln!("completed with {n} item error(s)");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
