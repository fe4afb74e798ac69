//! Benchmark dataset files: loading, validation, coverage and candidate
//! curation.
//!
//! The on-disk format is one record per line, tab-separated
//! `id, locale, category, original, reference`, UTF-8 without a header.
//! Files ending in `.jsonl` are read as JSON lines with the same field names.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::llm::{LlmClient, LlmError};
use crate::model::{parse_category, parse_locale, Category, Locale, Sample};
use crate::prompting::{ChatMessage, RenderedPrompt};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error("{path}:{line}: row locale {found} does not match dataset locale {expected}")]
    LocaleMismatch { path: PathBuf, line: usize, expected: String, found: String },
    #[error("{path}:{line}: duplicate sample id {id:?}")]
    DuplicateId { path: PathBuf, line: usize, id: String },
    #[error("sample {id:?} cannot be written as TSV: fields must not contain tabs or line breaks")]
    Unserializable { id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub locale: Locale,
    pub samples: Vec<Sample>,
    pub source_path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Tsv,
    Jsonl,
}

impl FileFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("jsonl") => FileFormat::Jsonl,
            _ => FileFormat::Tsv,
        }
    }
}

#[derive(Deserialize)]
struct JsonRow {
    id: String,
    locale: String,
    category: String,
    original: String,
    reference: String,
}

/// Split a TSV line into exactly `n` fields.
pub(crate) fn split_tsv(line: &str, n: usize) -> Result<Vec<&str>, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != n {
        return Err(format!("expected {n} tab-separated fields, found {}", fields.len()));
    }
    Ok(fields)
}

/// Non-blank lines with their 1-based line numbers; a trailing `\r` is dropped.
pub(crate) fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Parse dataset text. `source` is only used for error messages.
    pub fn parse(
        text: &str,
        format: FileFormat,
        locale: &Locale,
        source: &Path,
    ) -> Result<Dataset, DatasetError> {
        let malformed = |line: usize, reason: String| DatasetError::Malformed {
            path: source.to_path_buf(),
            line,
            reason,
        };
        let mut samples = Vec::new();
        let mut seen = HashSet::new();
        for (line_no, line) in numbered_lines(text) {
            let (id, tag, category, original, reference) = match format {
                FileFormat::Tsv => {
                    let f = split_tsv(line, 5).map_err(|r| malformed(line_no, r))?;
                    (f[0].to_string(), f[1].to_string(), f[2].to_string(), f[3].to_string(), f[4].to_string())
                }
                FileFormat::Jsonl => {
                    let row: JsonRow = serde_json::from_str(line)
                        .map_err(|e| malformed(line_no, format!("invalid JSON row: {e}")))?;
                    (row.id, row.locale, row.category, row.original, row.reference)
                }
            };
            let row_locale = parse_locale(&tag).map_err(|e| malformed(line_no, e.to_string()))?;
            if &row_locale != locale {
                return Err(DatasetError::LocaleMismatch {
                    path: source.to_path_buf(),
                    line: line_no,
                    expected: locale.to_string(),
                    found: row_locale.to_string(),
                });
            }
            let category =
                parse_category(&category).map_err(|e| malformed(line_no, e.to_string()))?;
            for (name, value) in [("id", &id), ("original", &original), ("reference", &reference)] {
                if value.trim().is_empty() {
                    return Err(malformed(line_no, format!("empty {name} field")));
                }
            }
            if !seen.insert(id.clone()) {
                return Err(DatasetError::DuplicateId { path: source.to_path_buf(), line: line_no, id });
            }
            samples.push(Sample { id, locale: row_locale, category, original, reference });
        }
        Ok(Dataset { locale: locale.clone(), samples, source_path: source.display().to_string() })
    }

    pub fn to_tsv(&self) -> Result<String, DatasetError> {
        let mut out = String::new();
        for s in &self.samples {
            let fields = [s.id.as_str(), s.locale.tag(), s.category.as_str(), &s.original, &s.reference];
            if fields.iter().any(|f| f.contains(['\t', '\n', '\r'])) {
                return Err(DatasetError::Unserializable { id: s.id.clone() });
            }
            out.push_str(&fields.join("\t"));
            out.push('\n');
        }
        Ok(out)
    }

    pub fn to_jsonl(&self) -> String {
        self.samples
            .iter()
            .map(|s| serde_json::to_string(s).expect("sample serializes") + "\n")
            .collect()
    }

    /// Write in the format implied by the file extension.
    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let text = match FileFormat::from_path(path) {
            FileFormat::Tsv => self.to_tsv()?,
            FileFormat::Jsonl => self.to_jsonl(),
        };
        fs::write(path, text).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
    }
}

/// Load a benchmark file; every row must carry `locale`.
pub fn load_dataset(path: impl AsRef<Path>, locale: &Locale) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    Dataset::parse(&text, FileFormat::from_path(path), locale, path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Count for every category, including zeros.
    pub per_category_counts: BTreeMap<Category, usize>,
    /// Categories whose count differs from the expected count.
    pub missing_categories: Vec<Category>,
    pub total: usize,
}

pub fn validate_coverage(dataset: &Dataset, expected_per_category: usize) -> CoverageReport {
    let mut per_category_counts: BTreeMap<Category, usize> =
        Category::ALL.iter().map(|c| (*c, 0)).collect();
    for s in &dataset.samples {
        *per_category_counts.entry(s.category).or_default() += 1;
    }
    let missing_categories = per_category_counts
        .iter()
        .filter(|(_, n)| **n != expected_per_category)
        .map(|(c, _)| *c)
        .collect();
    CoverageReport { per_category_counts, missing_categories, total: dataset.samples.len() }
}

/// One problem found by [`gate_dataset`], with the file lines it concerns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateIssue {
    pub lines: Vec<usize>,
    pub message: String,
}

impl std::fmt::Display for GateIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.lines.as_slice() {
            [] => write!(f, "{}", self.message),
            [one] => write!(f, "line {one}: {}", self.message),
            many => {
                let list: Vec<String> = many.iter().map(usize::to_string).collect();
                write!(f, "lines {}: {}", list.join(","), self.message)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateReport {
    /// Coverage over the rows that parsed.
    pub coverage: CoverageReport,
    pub issues: Vec<GateIssue>,
}

impl GateReport {
    pub fn passed(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Check a dataset file without stopping at the first bad row: every
/// malformed row, duplicate id and miscounted category is reported.
pub fn gate_dataset(
    text: &str,
    format: FileFormat,
    locale: &Locale,
    expected_per_category: usize,
) -> GateReport {
    let mut issues = Vec::new();
    let mut rows: Vec<(usize, Sample)> = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (line_no, line) in numbered_lines(text) {
        match Dataset::parse(line, format, locale, Path::new("")) {
            Ok(mut d) => {
                let sample = d.samples.remove(0);
                if let Some(first) = seen.get(&sample.id) {
                    issues.push(GateIssue {
                        lines: vec![line_no],
                        message: format!("duplicate sample id {:?} (first on line {first})", sample.id),
                    });
                    continue;
                }
                seen.insert(sample.id.clone(), line_no);
                rows.push((line_no, sample));
            }
            Err(e) => {
                let message = match e {
                    DatasetError::Malformed { reason, .. } => reason,
                    DatasetError::LocaleMismatch { expected, found, .. } => {
                        format!("row locale {found} does not match dataset locale {expected}")
                    }
                    other => other.to_string(),
                };
                issues.push(GateIssue { lines: vec![line_no], message });
            }
        }
    }
    let dataset = Dataset {
        locale: locale.clone(),
        samples: rows.iter().map(|(_, s)| s.clone()).collect(),
        source_path: String::new(),
    };
    let coverage = validate_coverage(&dataset, expected_per_category);
    for category in &coverage.missing_categories {
        let lines: Vec<usize> = rows.iter().filter(|(_, s)| s.category == *category).map(|(l, _)| *l).collect();
        issues.push(GateIssue {
            message: format!(
                "category {category} has {} rows, expected {expected_per_category}",
                lines.len()
            ),
            lines,
        });
    }
    GateReport { coverage, issues }
}

#[derive(Debug, thiserror::Error)]
pub enum CurationError {
    #[error("candidate count must be at least 1")]
    ZeroCount,
    #[error(transparent)]
    Transport(#[from] LlmError),
    #[error("model reply contained no parseable `original ||| normalized` pairs")]
    NoCandidates,
}

const CURATION_TEMPLATE: &str = include_str!("../assets/curation_prompt.txt");

/// Separator between the two halves of a generated pair.
pub const PAIR_SENTINEL: &str = "|||";

/// Messages asking the model for `n` new pairs of one category.
pub fn curation_prompt(locale: &Locale, category: Category, n: usize) -> RenderedPrompt {
    let system = CURATION_TEMPLATE
        .replace("{locale}", locale.display_name())
        .replace("{category}", category.display_name())
        .replace("{n}", &n.to_string());
    RenderedPrompt::new(vec![
        ChatMessage::system(system.trim_end()),
        ChatMessage::user(format!(
            "Generate {n} {} examples for {}.",
            category.display_name(),
            locale.display_name()
        )),
    ])
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim();
    if let Some(rest) = line.strip_prefix("- ").or_else(|| line.strip_prefix("* ")) {
        return rest.trim_start();
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return rest.trim_start();
        }
    }
    line
}

/// Parse a curation reply into unreviewed candidate samples. Returns the
/// parsed samples and the non-blank lines that were rejected.
pub fn parse_candidate_reply(
    reply: &str,
    locale: &Locale,
    category: Category,
) -> (Vec<Sample>, Vec<String>) {
    let mut samples = Vec::new();
    let mut rejected = Vec::new();
    for line in reply.lines() {
        if line.trim().is_empty() || line.trim_start().starts_with("```") {
            continue;
        }
        let body = strip_list_marker(line);
        let parts: Vec<&str> = body.split(PAIR_SENTINEL).map(str::trim).collect();
        match parts.as_slice() {
            [original, normalized] if !original.is_empty() && !normalized.is_empty() => {
                samples.push(Sample {
                    id: format!("candidate-{}-{}-{:03}", locale.tag(), category.as_str(), samples.len() + 1),
                    locale: locale.clone(),
                    category,
                    original: (*original).to_string(),
                    reference: (*normalized).to_string(),
                });
            }
            _ => rejected.push(line.to_string()),
        }
    }
    (samples, rejected)
}

/// Ask the model for `n` candidate pairs. Candidates are unreviewed and
/// belong in the review queue, never directly in a benchmark file.
pub fn curate_candidates(
    locale: &Locale,
    category: Category,
    n: usize,
    client: &LlmClient,
) -> Result<Vec<Sample>, CurationError> {
    if n == 0 {
        return Err(CurationError::ZeroCount);
    }
    let prompt = curation_prompt(locale, category, n);
    let output = client.complete(&prompt)?;
    let (mut samples, rejected) = parse_candidate_reply(&output.hypothesis, locale, category);
    for line in &rejected {
        log::warn!("dropping unparseable candidate line for {locale}/{category}: {line:?}");
    }
    if samples.is_empty() {
        return Err(CurationError::NoCandidates);
    }
    samples.truncate(n);
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn en() -> Locale {
        parse_locale("en-US").unwrap()
    }

    fn parse_tsv(text: &str) -> Result<Dataset, DatasetError> {
        Dataset::parse(text, FileFormat::Tsv, &en(), Path::new("mem.tsv"))
    }

    #[test]
    fn empty_input_is_an_empty_dataset() {
        assert!(parse_tsv("").unwrap().is_empty());
        assert!(parse_tsv("\n\n").unwrap().is_empty());
    }

    #[test]
    fn unknown_category_reports_line() {
        let text = "a\ten-US\tcardinal\t5 cats\tfive cats\nb\ten-US\temoji\t:)\tsmile\n";
        match parse_tsv(text).unwrap_err() {
            DatasetError::Malformed { line, reason, .. } => {
                assert_eq!(line, 2);
                assert!(reason.contains("emoji"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_field_and_wrong_arity_are_malformed() {
        let err = parse_tsv("a\ten-US\tcardinal\t  \tfive\n").unwrap_err();
        assert!(matches!(err, DatasetError::Malformed { line: 1, .. }), "{err}");
        let err = parse_tsv("a\ten-US\tcardinal\t5\n").unwrap_err();
        assert!(matches!(err, DatasetError::Malformed { line: 1, .. }), "{err}");
    }

    #[test]
    fn locale_mismatch_and_duplicates() {
        let err = parse_tsv("a\tde-DE\tcardinal\t5\tfünf\n").unwrap_err();
        assert!(matches!(err, DatasetError::LocaleMismatch { line: 1, .. }), "{err}");
        let err = parse_tsv("a\ten-US\tcardinal\t5\tfive\na\ten-US\tcardinal\t6\tsix\n").unwrap_err();
        assert!(matches!(err, DatasetError::DuplicateId { line: 2, .. }), "{err}");
    }

    #[test]
    fn jsonl_rows_are_accepted() {
        let text = r#"{"id":"a","locale":"en-US","category":"Sports Score","original":"3-2","reference":"three to two"}"#;
        let d = Dataset::parse(text, FileFormat::Jsonl, &en(), Path::new("x.jsonl")).unwrap();
        assert_eq!(d.samples[0].category, Category::SportsScore);
        let again = Dataset::parse(&d.to_jsonl(), FileFormat::Jsonl, &en(), Path::new("x.jsonl")).unwrap();
        assert_eq!(again.samples, d.samples);
    }

    #[test]
    fn coverage_counts() {
        let mut text = String::new();
        for (i, c) in Category::ALL.iter().enumerate() {
            let n = if *c == Category::Cardinal { 19 } else { 20 };
            for j in 0..n {
                text.push_str(&format!("s{i}-{j}\ten-US\t{c}\tx\ty\n"));
            }
        }
        let d = parse_tsv(&text).unwrap();
        let report = validate_coverage(&d, 20);
        assert_eq!(report.missing_categories, vec![Category::Cardinal]);
        assert_eq!(report.total, 539);
        assert_eq!(report.per_category_counts.values().sum::<usize>(), report.total);

        let empty = validate_coverage(&parse_tsv("").unwrap(), 20);
        assert_eq!(empty.missing_categories.len(), 27);
        assert_eq!(empty.total, 0);
    }

    #[test]
    fn candidate_reply_parsing_drops_malformed_lines() {
        let reply = "1. I have 3 cats. ||| I have three cats.\n\
                     2. no separator here\n\
                     3. It costs 12 dollars. ||| It costs twelve dollars.\n";
        let (samples, rejected) = parse_candidate_reply(reply, &en(), Category::Cardinal);
        assert_eq!(samples.len(), 2);
        assert_eq!(rejected.len(), 1);
        assert_eq!(samples[0].original, "I have 3 cats.");
        assert_eq!(samples[1].reference, "It costs twelve dollars.");
        assert!(samples.iter().all(|s| s.id.starts_with("candidate-")));
        assert!(samples.iter().all(|s| s.category == Category::Cardinal && s.locale == en()));
    }

    #[test]
    fn candidate_pairs_need_both_halves() {
        let (samples, rejected) =
            parse_candidate_reply("a ||| \n ||| b\na ||| b ||| c\n", &en(), Category::Date);
        assert!(samples.is_empty());
        assert_eq!(rejected.len(), 3);
    }

    #[test]
    fn gate_reports_every_bad_line() {
        let mut text = String::new();
        let mut n = 0;
        for c in Category::ALL {
            for _ in 0..2 {
                n += 1;
                text.push_str(&format!("r{n}\ten-US\t{}\tx{n}\ty{n}\n", c.as_str()));
            }
        }
        let ok = gate_dataset(&text, FileFormat::Tsv, &en(), 2);
        assert!(ok.passed(), "{:?}", ok.issues);
        assert_eq!(ok.coverage.total, 54);

        let mut lines: Vec<&str> = text.lines().collect();
        lines.remove(0);
        lines.push("bad\ten-US\temoji\t:)\tsmile");
        lines.push("r2\ten-US\tcardinal\t1\tone");
        let report = gate_dataset(&lines.join("\n"), FileFormat::Tsv, &en(), 2);
        let rendered: Vec<String> = report.issues.iter().map(ToString::to_string).collect();
        assert_eq!(report.issues.len(), 3, "{rendered:?}");
        assert_eq!(report.issues[0].lines, [54]);
        assert!(rendered[0].contains("emoji"));
        assert_eq!(report.issues[1].lines, [55]);
        assert_eq!(report.issues[2].lines, [1]);
        assert!(rendered[2].contains("has 1 rows, expected 2"), "{rendered:?}");
    }
}
