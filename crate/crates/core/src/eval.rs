//! End-to-end evaluation: prompts, model or baseline outputs, scoring,
//! aggregation and the files of a run directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::baseline::{Baseline, BaselineError};
use crate::dataset::Dataset;
use crate::hillclimb::{run_id_for, HillclimbError, IterationRecord, IterationStore};
use crate::llm::{Cassette, HttpTransport, LlmClient, LlmError, ProviderConfig};
use crate::model::{icl_set_hash, Decoding, IclExample, RunConfig};
use crate::prompting::{IclSelection, IclStore, InstructionTemplate, PromptBuilder, PromptError};
use crate::reporting::{aggregate_at, render_report, score_sample, ReportError, ReportFormat, RunReport, ScoredSample};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Store(#[from] HillclimbError),
    #[error("run directory {0} already exists")]
    RunExists(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} line {line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
}

pub enum System {
    Llm(Box<LlmClient>),
    Baseline,
}

/// How to obtain hypotheses, before any file or network is touched.
#[derive(Debug, Clone, PartialEq)]
pub enum SystemSpec {
    Baseline,
    Live(ProviderConfig),
    Record(ProviderConfig, PathBuf),
    Replay(ProviderConfig, PathBuf),
}

impl SystemSpec {
    pub fn build(&self) -> Result<System, LlmError> {
        let http = |cfg: &ProviderConfig| -> Result<Arc<dyn crate::llm::Transport>, LlmError> {
            Ok(Arc::new(HttpTransport::from_config(cfg)?))
        };
        Ok(match self {
            SystemSpec::Baseline => System::Baseline,
            SystemSpec::Live(cfg) => System::Llm(Box::new(LlmClient::live(cfg.clone(), http(cfg)?)?)),
            SystemSpec::Record(cfg, path) => {
                System::Llm(Box::new(LlmClient::record(cfg.clone(), http(cfg)?, Cassette::open_record(path)?)?))
            }
            SystemSpec::Replay(cfg, path) => System::Llm(Box::new(LlmClient::replay(cfg.clone(), Cassette::open_replay(path)?)?)),
        })
    }
}

pub const SAMPLES_FILE: &str = "samples.jsonl";

pub struct EvalPlan {
    pub dataset: Dataset,
    pub icl: IclStore,
    pub template: InstructionTemplate,
    pub selection: IclSelection,
    pub system: System,
    pub parallelism: usize,
    pub parent_run_id: Option<String>,
    /// Defaults to the parent's iteration plus one, or 0 without a parent.
    pub iteration: Option<u32>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemError {
    pub sample_id: String,
    pub message: String,
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub record: IterationRecord<f64>,
    pub run_dir: PathBuf,
    pub scored: Vec<ScoredSample<f64>>,
    pub item_errors: Vec<ItemError>,
}

impl EvalPlan {
    fn icl_examples(&self) -> Result<Vec<IclExample>, PromptError> {
        match self.system {
            System::Baseline => Ok(Vec::new()),
            System::Llm(_) => Ok(PromptBuilder::new(&self.template, &self.icl, &self.dataset.locale, self.selection)?.icl().to_vec()),
        }
    }

    /// The configuration recorded for this run.
    pub fn config(&self, store: &IterationStore) -> Result<RunConfig, EvalError> {
        let iteration = match (self.iteration, &self.parent_run_id) {
            (Some(i), _) => i,
            (None, Some(parent)) => store.get(parent).map_err(|_| HillclimbError::UnknownParent(parent.clone()))?.config.iteration + 1,
            (None, None) => 0,
        };
        let (system_id, decoding) = match &self.system {
            System::Baseline => (Baseline::SYSTEM_ID.to_string(), Decoding::default()),
            System::Llm(client) => {
                let c = client.config();
                (c.model_id.clone(), Decoding { temperature: c.temperature, max_tokens: c.max_tokens })
            }
        };
        Ok(RunConfig {
            locale: self.dataset.locale.clone(),
            system_id,
            iteration,
            icl_set_hash: icl_set_hash(self.icl_examples()?.iter()),
            decoding,
        })
    }

    pub fn run_id(&self, store: &IterationStore) -> Result<String, EvalError> {
        Ok(run_id_for(&self.config(store)?, self.created_at))
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.to_path_buf(), source }
}

/// Produce a hypothesis (or an item error) for every sample, in order.
fn hypotheses(plan: &EvalPlan) -> Result<Vec<Result<String, String>>, EvalError> {
    let dataset = &plan.dataset;
    match &plan.system {
        System::Baseline => {
            let baseline = Baseline::new(&dataset.locale)?;
            Ok(dataset.samples.iter().map(|s| Ok(baseline.normalize(&s.original))).collect())
        }
        System::Llm(client) => {
            let builder = PromptBuilder::new(&plan.template, &plan.icl, &dataset.locale, plan.selection)?;
            builder.check_disjoint(dataset)?;
            let prompts = dataset
                .samples
                .iter()
                .map(|s| Ok((s.id.clone(), builder.build(&s.original)?.render())))
                .collect::<Result<Vec<_>, PromptError>>()?;
            Ok(client
                .complete_batch(&prompts, plan.parallelism)
                .into_iter()
                .map(|r| r.map(|o| o.hypothesis).map_err(|e| e.to_string()))
                .collect())
        }
    }
}

/// Run the plan and write `runs/<run-id>/` plus the index entry. Item
/// failures are scored as empty hypotheses and reported in the outcome.
pub fn run_eval(plan: &EvalPlan, store: &IterationStore) -> Result<EvalOutcome, EvalError> {
    let config = plan.config(store)?;
    let run_id = run_id_for(&config, plan.created_at);
    let run_dir = store.dir().join(&run_id);
    if run_dir.exists() {
        return Err(EvalError::RunExists(run_dir));
    }
    let mut scored = Vec::with_capacity(plan.dataset.len());
    let mut item_errors = Vec::new();
    for (sample, hypothesis) in plan.dataset.samples.iter().zip(hypotheses(plan)?) {
        let mut s = score_sample::<f64>(sample, hypothesis.as_deref().unwrap_or(""))?;
        if let Err(message) = hypothesis {
            log::warn!("{}: {message}", sample.id);
            item_errors.push(ItemError { sample_id: sample.id.clone(), message: message.clone() });
            s.error = Some(message);
        }
        scored.push(s);
    }
    let report = aggregate_at(&scored, config.clone(), plan.created_at)?;
    fs::create_dir_all(&run_dir).map_err(io(&run_dir))?;
    write_run_files(&run_dir, &report, &scored)?;
    let record = IterationRecord { run_id, config, report, parent_run_id: plan.parent_run_id.clone() };
    store.append(&record)?;
    Ok(EvalOutcome { record, run_dir, scored, item_errors })
}

pub fn write_run_files(dir: &Path, report: &RunReport<f64>, scored: &[ScoredSample<f64>]) -> Result<(), EvalError> {
    for format in ReportFormat::ALL {
        let path = dir.join(format!("report.{}", format.extension()));
        fs::write(&path, render_report(report, format)).map_err(io(&path))?;
    }
    let path = dir.join(SAMPLES_FILE);
    let mut lines = String::new();
    for s in scored {
        lines.push_str(&serde_json::to_string(s).expect("sample serializes"));
        lines.push('\n');
    }
    fs::write(&path, lines).map_err(io(&path))
}

pub fn read_report(dir: &Path) -> Result<RunReport<f64>, EvalError> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    Ok(crate::reporting::parse_report_json(&text)?)
}

pub fn read_samples(dir: &Path) -> Result<Vec<ScoredSample<f64>>, EvalError> {
    let path = dir.join(SAMPLES_FILE);
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Malformed { path: path.clone(), line: i + 1, reason: e.to_string() })
        })
        .collect()
}
