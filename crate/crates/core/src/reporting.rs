//! Run scoring, per-category aggregation, report rendering and
//! side-by-side diffs.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{Display, Write as _};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::llm::ModelOutput;
use crate::metrics::{canonicalize, score_pair, Alignment, BleuStats, EditKind, MetricValue, MetricsError, ScoringOptions};
use crate::model::{parse_category, Category, Decoding, Locale, RunConfig, Sample};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("more than one output for sample {0}")]
    DuplicateOutput(String),
    #[error("output for sample {0} which is not in the dataset")]
    UnknownOutput(String),
    #[error("sample {sample_id}: {source}")]
    Metric { sample_id: String, source: MetricsError },
    #[error("cannot aggregate an empty run")]
    EmptyRun,
    #[error("unknown report format {0:?} (expected markdown, json or tsv)")]
    UnknownFormat(String),
    #[error("malformed report: {0}")]
    Malformed(String),
}

/// A hypothesis scored against its sample's reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: DeserializeOwned"))]
pub struct ScoredSample<S> {
    pub sample: Sample,
    pub hypothesis: String,
    pub metric: MetricValue<S>,
    pub alignment: Alignment,
    pub ref_tokens: Vec<String>,
    pub hyp_tokens: Vec<String>,
    pub bleu_stats: BleuStats,
    /// Indices into `alignment.ops`; always non-match ops.
    pub flagged_errors: Vec<usize>,
    /// Item-level failure that left this sample without a model output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl<S> ScoredSample<S> {
    pub fn is_error(&self) -> bool {
        !self.flagged_errors.is_empty() || self.error.is_some()
    }
}

/// Score one hypothesis. Every non-match op starts out flagged.
pub fn score_sample<S: Scalar>(sample: &Sample, hypothesis: &str) -> Result<ScoredSample<S>, ReportError> {
    let reference = canonicalize(&sample.reference, &sample.locale);
    let hyp = canonicalize(hypothesis, &sample.locale);
    let pair = score_pair::<S>(&reference, &hyp, ScoringOptions::for_locale(&sample.locale))
        .map_err(|source| ReportError::Metric { sample_id: sample.id.clone(), source })?;
    let flagged_errors = pair
        .alignment
        .ops
        .iter()
        .enumerate()
        .filter(|(_, op)| op.kind != EditKind::Match)
        .map(|(i, _)| i)
        .collect();
    Ok(ScoredSample {
        sample: sample.clone(),
        hypothesis: hypothesis.to_string(),
        metric: pair.metric,
        alignment: pair.alignment,
        ref_tokens: pair.ref_tokens,
        hyp_tokens: pair.hyp_tokens,
        bleu_stats: pair.bleu_stats,
        flagged_errors,
        error: None,
    })
}

/// Score every dataset sample, in dataset order. Samples without an output
/// are scored against an empty hypothesis.
pub fn score_run<S: Scalar>(dataset: &Dataset, outputs: &[ModelOutput]) -> Result<Vec<ScoredSample<S>>, ReportError> {
    let known: HashMap<&str, ()> = dataset.samples.iter().map(|s| (s.id.as_str(), ())).collect();
    let mut by_id: HashMap<&str, &ModelOutput> = HashMap::with_capacity(outputs.len());
    for output in outputs {
        if !known.contains_key(output.sample_id.as_str()) {
            return Err(ReportError::UnknownOutput(output.sample_id.clone()));
        }
        if by_id.insert(output.sample_id.as_str(), output).is_some() {
            return Err(ReportError::DuplicateOutput(output.sample_id.clone()));
        }
    }
    dataset
        .samples
        .iter()
        .map(|sample| {
            let hypothesis = by_id.get(sample.id.as_str()).map_or("", |o| o.hypothesis.as_str());
            score_sample(sample, hypothesis)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: DeserializeOwned"))]
pub struct CategoryScore<S> {
    /// Micro-averaged: total edits over total reference length.
    pub rate: S,
    /// Corpus BLEU over the category's pairs.
    pub bleu: S,
    pub n: usize,
    pub edits: usize,
    pub ref_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: DeserializeOwned"))]
pub struct RunReport<S> {
    pub config: RunConfig,
    pub per_category: BTreeMap<Category, CategoryScore<S>>,
    /// Unweighted mean of the per-category rates.
    pub overall_rate: S,
    /// Corpus BLEU over every pair in the run.
    pub overall_bleu: S,
    pub created_at: DateTime<Utc>,
}

impl<S: Scalar> RunReport<S> {
    /// Build a report from per-category rates alone, e.g. published table
    /// values. The overall rate is their mean; BLEU is left at zero.
    pub fn from_rates(config: RunConfig, rates: impl IntoIterator<Item = (Category, S)>, created_at: DateTime<Utc>) -> Self {
        let per_category: BTreeMap<Category, CategoryScore<S>> = rates
            .into_iter()
            .map(|(c, rate)| (c, CategoryScore { rate, bleu: S::zero(), n: 1, edits: 0, ref_len: 0 }))
            .collect();
        let rates: Vec<S> = per_category.values().map(|c| c.rate).collect();
        RunReport { config, per_category, overall_rate: S::mean(&rates).unwrap_or_else(S::zero), overall_bleu: S::zero(), created_at }
    }
}

pub fn aggregate<S: Scalar>(scored: &[ScoredSample<S>], config: RunConfig) -> Result<RunReport<S>, ReportError> {
    aggregate_at(scored, config, Utc::now())
}

/// Aggregate with a fixed creation time. The fold runs over samples sorted
/// by id, so the result does not depend on input order.
pub fn aggregate_at<S: Scalar>(
    scored: &[ScoredSample<S>],
    config: RunConfig,
    created_at: DateTime<Utc>,
) -> Result<RunReport<S>, ReportError> {
    if scored.is_empty() {
        return Err(ReportError::EmptyRun);
    }
    let mut sorted: Vec<&ScoredSample<S>> = scored.iter().collect();
    sorted.sort_by(|a, b| a.sample.id.cmp(&b.sample.id));
    let mut buckets: BTreeMap<Category, (usize, usize, usize, BleuStats)> = BTreeMap::new();
    let mut corpus = BleuStats::default();
    for s in sorted {
        let entry = buckets.entry(s.sample.category).or_default();
        entry.0 += 1;
        entry.1 += s.metric.edit_counts.edits();
        entry.2 += s.metric.ref_len;
        entry.3 = entry.3 + s.bleu_stats;
        corpus = corpus + s.bleu_stats;
    }
    let per_category: BTreeMap<Category, CategoryScore<S>> = buckets
        .into_iter()
        .map(|(category, (n, edits, ref_len, stats))| {
            let score = CategoryScore { rate: S::ratio(edits, ref_len), bleu: S::approx(stats.score::<f64>()), n, edits, ref_len };
            (category, score)
        })
        .collect();
    let rates: Vec<S> = per_category.values().map(|c| c.rate).collect();
    Ok(RunReport {
        config,
        overall_rate: S::mean(&rates).expect("non-empty run has a category"),
        overall_bleu: S::approx(corpus.score::<f64>()),
        per_category,
        created_at,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Json,
    Tsv,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Markdown, ReportFormat::Json, ReportFormat::Tsv];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Markdown => "md",
            ReportFormat::Json => "json",
            ReportFormat::Tsv => "tsv",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            "tsv" => Ok(ReportFormat::Tsv),
            _ => Err(ReportError::UnknownFormat(s.to_string())),
        }
    }
}

fn percent<S: Scalar>(x: S) -> String {
    format!("{:.2}", x.to_f64_lossy() * 100.0)
}

/// "WER" for whitespace locales, "CER" otherwise.
pub fn rate_label(locale: &Locale) -> &'static str {
    if locale.whitespace_delimited() { "WER" } else { "CER" }
}

fn render_markdown<S: Scalar>(report: &RunReport<S>) -> String {
    let c = &report.config;
    let label = rate_label(&c.locale);
    let mut out = String::new();
    let _ = writeln!(out, "# {} on {} ({}), iteration {}\n", c.system_id, c.locale.display_name(), c.locale, c.iteration);
    let _ = writeln!(out, "| Language | System | {label} (%) | BLEU (%) |");
    let _ = writeln!(out, "|---|---|---:|---:|");
    let _ = writeln!(
        out,
        "| {} | {} | {} | {} |\n",
        c.locale.display_name(),
        c.system_id,
        percent(report.overall_rate),
        percent(report.overall_bleu)
    );
    let _ = writeln!(out, "## Per category\n");
    let _ = writeln!(out, "| Category | n | {label} (%) | BLEU (%) |");
    let _ = writeln!(out, "|---|---:|---:|---:|");
    for (category, score) in &report.per_category {
        let _ = writeln!(out, "| {} | {} | {} | {} |", category.display_name(), score.n, percent(score.rate), percent(score.bleu));
    }
    let n: usize = report.per_category.values().map(|s| s.n).sum();
    let _ = writeln!(out, "| Overall | {n} | {} | {} |\n", percent(report.overall_rate), percent(report.overall_bleu));
    let _ = writeln!(
        out,
        "ICL set `{}`, temperature {}, max tokens {}, created {}",
        c.icl_set_hash,
        c.decoding.temperature,
        c.decoding.max_tokens,
        report.created_at.to_rfc3339_opts(SecondsFormat::Secs, true)
    );
    out
}

const TSV_HEADER: &str = "category\trate\tbleu\tn\tedits\tref_len";

fn render_tsv<S: Scalar + Display>(report: &RunReport<S>) -> String {
    let c = &report.config;
    let mut out = String::from("field\tvalue\n");
    for (k, v) in [
        ("locale", c.locale.to_string()),
        ("system_id", c.system_id.clone()),
        ("iteration", c.iteration.to_string()),
        ("icl_set_hash", c.icl_set_hash.clone()),
        ("temperature", c.decoding.temperature.to_string()),
        ("max_tokens", c.decoding.max_tokens.to_string()),
        ("created_at", report.created_at.to_rfc3339_opts(SecondsFormat::AutoSi, true)),
        ("overall_rate", report.overall_rate.to_string()),
        ("overall_bleu", report.overall_bleu.to_string()),
    ] {
        let _ = writeln!(out, "{k}\t{v}");
    }
    let _ = writeln!(out, "\n{TSV_HEADER}");
    for (category, s) in &report.per_category {
        let _ = writeln!(out, "{category}\t{}\t{}\t{}\t{}\t{}", s.rate, s.bleu, s.n, s.edits, s.ref_len);
    }
    out
}

pub fn render_report<S: Scalar + Serialize + Display>(report: &RunReport<S>, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        ReportFormat::Tsv => render_tsv(report),
    }
}

pub fn parse_report_json<S: DeserializeOwned>(text: &str) -> Result<RunReport<S>, ReportError> {
    serde_json::from_str(text).map_err(|e| ReportError::Malformed(e.to_string()))
}

fn parse_field<T: FromStr>(value: Option<&str>, name: &str) -> Result<T, ReportError> {
    value
        .ok_or_else(|| ReportError::Malformed(format!("missing {name}")))?
        .parse()
        .map_err(|_| ReportError::Malformed(format!("bad {name}")))
}

/// Inverse of the TSV rendering.
pub fn parse_report_tsv<S: Scalar + FromStr>(text: &str) -> Result<RunReport<S>, ReportError> {
    let (head, body) = text
        .split_once(&format!("\n\n{TSV_HEADER}\n"))
        .ok_or_else(|| ReportError::Malformed("missing category table".into()))?;
    let fields: HashMap<&str, &str> = head.lines().skip(1).filter_map(|l| l.split_once('\t')).collect();
    let get = |k: &str| fields.get(k).copied();
    let locale: Locale = parse_field(get("locale"), "locale")?;
    let config = RunConfig {
        locale,
        system_id: parse_field(get("system_id"), "system_id")?,
        iteration: parse_field(get("iteration"), "iteration")?,
        icl_set_hash: parse_field(get("icl_set_hash"), "icl_set_hash")?,
        decoding: Decoding {
            temperature: parse_field(get("temperature"), "temperature")?,
            max_tokens: parse_field(get("max_tokens"), "max_tokens")?,
        },
    };
    let created_at = DateTime::parse_from_rfc3339(get("created_at").unwrap_or_default())
        .map_err(|e| ReportError::Malformed(format!("bad created_at: {e}")))?
        .with_timezone(&Utc);
    let mut per_category = BTreeMap::new();
    for line in body.lines().filter(|l| !l.is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(ReportError::Malformed(format!("category row {line:?}")));
        }
        let category = parse_category(cols[0]).map_err(|e| ReportError::Malformed(e.to_string()))?;
        let score = CategoryScore {
            rate: parse_field(Some(cols[1]), "rate")?,
            bleu: parse_field(Some(cols[2]), "bleu")?,
            n: parse_field(Some(cols[3]), "n")?,
            edits: parse_field(Some(cols[4]), "edits")?,
            ref_len: parse_field(Some(cols[5]), "ref_len")?,
        };
        per_category.insert(category, score);
    }
    Ok(RunReport {
        config,
        per_category,
        overall_rate: parse_field(get("overall_rate"), "overall_rate")?,
        overall_bleu: parse_field(get("overall_bleu"), "overall_bleu")?,
        created_at,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighlightKind {
    /// Both sides have tokens in the region.
    Substitute,
    Delete,
    Insert,
}

/// A maximal run of non-match ops. Ranges are half-open token indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Highlight {
    pub kind: HighlightKind,
    pub ops: [usize; 2],
    pub reference: Option<[usize; 2]>,
    pub hypothesis: Option<[usize; 2]>,
}

/// Original / ground truth / hypothesis with the differing regions marked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffRecord {
    pub sample_id: String,
    pub category: Category,
    pub original: String,
    pub reference: String,
    pub hypothesis: String,
    pub ref_tokens: Vec<String>,
    pub hyp_tokens: Vec<String>,
    pub alignment: Alignment,
    pub highlights: Vec<Highlight>,
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn span(indices: impl Iterator<Item = Option<usize>>) -> Option<[usize; 2]> {
    let present: Vec<usize> = indices.flatten().collect();
    Some([*present.first()?, present.last()? + 1])
}

pub fn highlights(alignment: &Alignment) -> Vec<Highlight> {
    let ops = &alignment.ops;
    let mut out = Vec::new();
    let mut k = 0;
    while k < ops.len() {
        if ops[k].kind == EditKind::Match {
            k += 1;
            continue;
        }
        let end = ops[k..].iter().position(|o| o.kind == EditKind::Match).map_or(ops.len(), |p| k + p);
        let run = &ops[k..end];
        let reference = span(run.iter().map(|o| o.ref_index));
        let hypothesis = span(run.iter().map(|o| o.hyp_index));
        let kind = match (reference, hypothesis) {
            (Some(_), Some(_)) => HighlightKind::Substitute,
            (Some(_), None) => HighlightKind::Delete,
            _ => HighlightKind::Insert,
        };
        out.push(Highlight { kind, ops: [k, end], reference, hypothesis });
        k = end;
    }
    out
}

pub fn diff_sample<S: Scalar>(s: &ScoredSample<S>) -> DiffRecord {
    DiffRecord {
        sample_id: s.sample.id.clone(),
        category: s.sample.category,
        original: s.sample.original.clone(),
        reference: s.sample.reference.clone(),
        hypothesis: s.hypothesis.clone(),
        ref_tokens: s.ref_tokens.clone(),
        hyp_tokens: s.hyp_tokens.clone(),
        alignment: s.alignment.clone(),
        highlights: highlights(&s.alignment),
        rate: s.metric.wer_or_cer.to_f64_lossy(),
        error: s.error.clone(),
    }
}
