//! Three-part normalization prompts: instruction, in-context examples and
//! the target sentence.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{numbered_lines, split_tsv, Dataset, FileFormat};
use crate::model::{icl_set_hash, parse_category, parse_locale, Category, IclExample, Locale};

pub const LOCALE_PLACEHOLDER: &str = "{locale}";

const DEFAULT_INSTRUCTION: &str = include_str!("../assets/instruction.txt");
const JA_JP_SUPPLEMENT: &str = include_str!("../assets/supplements/ja-JP.txt");

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("cannot read prompt asset {path}: {source}")]
    MissingAsset { path: PathBuf, source: std::io::Error },
    #[error("instruction template must contain {LOCALE_PLACEHOLDER} exactly once (found {0})")]
    Placeholder(usize),
    #[error("instruction template must list category {0:?} exactly once (found {1})")]
    CategoryListing(&'static str, usize),
    #[error("no ICL examples for locale {0}")]
    EmptyStore(String),
    #[error("ICL example count must be at least 1")]
    ZeroExamples,
    #[error("prompt target is empty")]
    EmptyTarget,
    #[error("{path}:{line}: {reason}")]
    MalformedStore { path: PathBuf, line: usize, reason: String },
    #[error("ICL examples overlap the evaluated dataset (samples {0:?})")]
    Leakage(Vec<String>),
    #[error("ICL example {0} already exists")]
    DuplicateExample(String),
    #[error("no ICL example matches {0}")]
    UnknownExample(String),
}

/// Instruction body with a locale placeholder plus per-locale supplements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionTemplate {
    body: String,
    supplements: BTreeMap<String, String>,
}

/// Number of list items in `body` reading exactly `- {label}`.
fn listed_count(body: &str, label: &str) -> usize {
    body.lines().filter(|l| l.trim().strip_prefix("- ").map(str::trim) == Some(label)).count()
}

impl InstructionTemplate {
    pub fn from_body(body: impl Into<String>) -> Result<Self, PromptError> {
        let body = body.into();
        let placeholders = body.matches(LOCALE_PLACEHOLDER).count();
        if placeholders != 1 {
            return Err(PromptError::Placeholder(placeholders));
        }
        for c in Category::ALL {
            let n = listed_count(&body, c.prompt_label());
            if n != 1 {
                return Err(PromptError::CategoryListing(c.prompt_label(), n));
            }
        }
        Ok(InstructionTemplate { body, supplements: BTreeMap::new() })
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let body = fs::read_to_string(path)
            .map_err(|source| PromptError::MissingAsset { path: path.to_path_buf(), source })?;
        Self::from_body(body)
    }

    pub fn with_supplement(mut self, locale: &Locale, text: impl Into<String>) -> Self {
        self.supplements.insert(locale.tag().to_string(), text.into());
        self
    }

    /// Instruction text for `locale`: placeholder filled with the language
    /// name, locale supplement (if any) appended on its own line.
    pub fn resolve(&self, locale: &Locale) -> String {
        let mut text = self.body.trim_end().replace(LOCALE_PLACEHOLDER, locale.display_name());
        if let Some(extra) = self.supplements.get(locale.tag()) {
            text.push('\n');
            text.push_str(extra.trim());
        }
        text
    }
}

impl Default for InstructionTemplate {
    fn default() -> Self {
        let ja = parse_locale("ja-JP").expect("valid tag");
        InstructionTemplate::from_body(DEFAULT_INSTRUCTION)
            .expect("bundled instruction template is valid")
            .with_supplement(&ja, JA_JP_SUPPLEMENT)
    }
}

/// Resolved instruction from the bundled template.
pub fn load_instruction(locale: &Locale) -> String {
    InstructionTemplate::default().resolve(locale)
}

/// Curated examples for all locales, deduplicated per locale on
/// (original, normalized). Immutable: edits return a new store.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IclStore {
    examples: BTreeMap<Locale, Vec<IclExample>>,
    version: String,
}

#[derive(Deserialize)]
struct JsonIclRow {
    locale: String,
    category: String,
    original: String,
    #[serde(alias = "reference")]
    normalized: String,
    provenance: String,
}

impl IclStore {
    pub fn new(examples: impl IntoIterator<Item = IclExample>) -> Self {
        let mut by_locale: BTreeMap<Locale, Vec<IclExample>> = BTreeMap::new();
        let mut seen = HashSet::new();
        for e in examples {
            if seen.insert((e.locale.clone(), e.original.clone(), e.normalized.clone())) {
                by_locale.entry(e.locale.clone()).or_default().push(e);
            }
        }
        let version = icl_set_hash(by_locale.values().flatten());
        IclStore { examples: by_locale, version }
    }

    /// Content digest of the whole store.
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn for_locale(&self, locale: &Locale) -> &[IclExample] {
        self.examples.get(locale).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = &IclExample> {
        self.examples.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.examples.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn position(&self, e: &IclExample) -> Option<usize> {
        self.for_locale(&e.locale)
            .iter()
            .position(|x| x.category == e.category && x.original == e.original)
    }

    fn describe(e: &IclExample) -> String {
        format!("{}/{}/{:?}", e.locale, e.category, e.original)
    }

    /// New store with `example` appended. Examples are keyed by
    /// (locale, category, original).
    pub fn with_added(&self, example: IclExample) -> Result<IclStore, PromptError> {
        let duplicate = self.position(&example).is_some()
            || self
                .for_locale(&example.locale)
                .iter()
                .any(|x| x.original == example.original && x.normalized == example.normalized);
        if duplicate {
            return Err(PromptError::DuplicateExample(Self::describe(&example)));
        }
        Ok(IclStore::new(self.iter().cloned().chain(std::iter::once(example))))
    }

    /// New store with the example sharing `example`'s key replaced.
    pub fn with_updated(&self, example: IclExample) -> Result<IclStore, PromptError> {
        let idx = self.position(&example).ok_or_else(|| PromptError::UnknownExample(Self::describe(&example)))?;
        let mut examples = self.examples.clone();
        let list = examples.get_mut(&example.locale).expect("locale present");
        list[idx] = example;
        Ok(IclStore::new(examples.into_values().flatten()))
    }

    /// New store without the example sharing `example`'s key.
    pub fn with_removed(&self, example: &IclExample) -> Result<IclStore, PromptError> {
        let idx = self.position(example).ok_or_else(|| PromptError::UnknownExample(Self::describe(example)))?;
        let mut examples = self.examples.clone();
        let list = examples.get_mut(&example.locale).expect("locale present");
        list.remove(idx);
        if list.is_empty() {
            examples.remove(&example.locale);
        }
        Ok(IclStore::new(examples.into_values().flatten()))
    }

    /// Parse a store file: dataset columns plus a trailing provenance column
    /// (`id, locale, category, original, normalized, provenance`). The id
    /// column is informational.
    pub fn parse(text: &str, format: FileFormat, source: &Path) -> Result<IclStore, PromptError> {
        let malformed = |line: usize, reason: String| PromptError::MalformedStore {
            path: source.to_path_buf(),
            line,
            reason,
        };
        let mut examples = Vec::new();
        for (line_no, line) in numbered_lines(text) {
            let (locale, category, original, normalized, provenance) = match format {
                FileFormat::Tsv => {
                    let f = split_tsv(line, 6).map_err(|r| malformed(line_no, r))?;
                    (f[1].to_string(), f[2].to_string(), f[3].to_string(), f[4].to_string(), f[5].to_string())
                }
                FileFormat::Jsonl => {
                    let row: JsonIclRow = serde_json::from_str(line)
                        .map_err(|e| malformed(line_no, format!("invalid JSON row: {e}")))?;
                    (row.locale, row.category, row.original, row.normalized, row.provenance)
                }
            };
            let err = |e: crate::model::ModelError| malformed(line_no, e.to_string());
            let example = IclExample {
                locale: parse_locale(&locale).map_err(err)?,
                category: parse_category(&category).map_err(err)?,
                provenance: provenance.parse().map_err(err)?,
                original,
                normalized,
            };
            if example.normalized.trim().is_empty() || example.original.trim().is_empty() {
                return Err(malformed(line_no, "empty original or normalized field".into()));
            }
            examples.push(example);
        }
        Ok(IclStore::new(examples))
    }

    pub fn load(path: &Path) -> Result<IclStore, PromptError> {
        let text = fs::read_to_string(path)
            .map_err(|source| PromptError::MissingAsset { path: path.to_path_buf(), source })?;
        Self::parse(&text, FileFormat::from_path(path), path)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (locale, list) in &self.examples {
            for (i, e) in list.iter().enumerate() {
                out.push_str(&format!(
                    "icl-{}-{:04}\t{}\t{}\t{}\t{}\t{}\n",
                    locale.tag(),
                    i + 1,
                    locale.tag(),
                    e.category.as_str(),
                    e.original,
                    e.normalized,
                    e.provenance.as_str()
                ));
            }
        }
        out
    }
}

/// How many ICL examples to put in a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum IclSelection {
    #[default]
    All,
    Take(usize),
}

/// Deterministic ICL selection: examples are grouped by category in table
/// order (content order within a category) and picked round-robin across
/// categories until `k` are chosen. The result is returned category-grouped.
pub fn select_icl(
    store: &IclStore,
    locale: &Locale,
    selection: IclSelection,
) -> Result<Vec<IclExample>, PromptError> {
    let available = store.for_locale(locale);
    if available.is_empty() {
        return Err(PromptError::EmptyStore(locale.to_string()));
    }
    let k = match selection {
        IclSelection::All => available.len(),
        IclSelection::Take(0) => return Err(PromptError::ZeroExamples),
        IclSelection::Take(k) => k.min(available.len()),
    };
    let mut groups: BTreeMap<Category, Vec<&IclExample>> = BTreeMap::new();
    for e in available {
        groups.entry(e.category).or_default().push(e);
    }
    for list in groups.values_mut() {
        list.sort_by(|a, b| (&a.original, &a.normalized).cmp(&(&b.original, &b.normalized)));
    }
    let mut taken: BTreeMap<Category, usize> = BTreeMap::new();
    let mut remaining = k;
    let mut round = 0;
    while remaining > 0 {
        for (category, list) in &groups {
            if remaining > 0 && round < list.len() {
                *taken.entry(*category).or_default() += 1;
                remaining -= 1;
            }
        }
        round += 1;
    }
    Ok(groups
        .iter()
        .flat_map(|(c, list)| list.iter().take(taken.get(c).copied().unwrap_or(0)))
        .map(|e| (*e).clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

/// The message sequence sent to a chat model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RenderedPrompt {
    pub messages: Vec<ChatMessage>,
}

impl RenderedPrompt {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        RenderedPrompt { messages }
    }

    /// Canonical byte form used for request digests.
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.messages).expect("messages serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub instruction: String,
    pub icl: Vec<IclExample>,
    pub target: String,
    pub locale: Locale,
}

impl PromptBundle {
    /// Instruction as system content, each example as a user/assistant
    /// exchange, target as the final user turn.
    pub fn render(&self) -> RenderedPrompt {
        let mut messages = Vec::with_capacity(2 + 2 * self.icl.len());
        messages.push(ChatMessage::system(self.instruction.clone()));
        for e in &self.icl {
            messages.push(ChatMessage::user(e.original.clone()));
            messages.push(ChatMessage::assistant(e.normalized.clone()));
        }
        messages.push(ChatMessage::user(self.target.clone()));
        RenderedPrompt::new(messages)
    }
}

/// Builds prompts for one locale with a fixed template and selection.
#[derive(Debug, Clone)]
pub struct PromptBuilder {
    locale: Locale,
    instruction: String,
    icl: Vec<IclExample>,
}

impl PromptBuilder {
    pub fn new(
        template: &InstructionTemplate,
        store: &IclStore,
        locale: &Locale,
        selection: IclSelection,
    ) -> Result<Self, PromptError> {
        Ok(PromptBuilder {
            locale: locale.clone(),
            instruction: template.resolve(locale),
            icl: select_icl(store, locale, selection)?,
        })
    }

    pub fn icl(&self) -> &[IclExample] {
        &self.icl
    }

    pub fn build(&self, target: &str) -> Result<PromptBundle, PromptError> {
        if target.trim().is_empty() {
            return Err(PromptError::EmptyTarget);
        }
        Ok(PromptBundle {
            instruction: self.instruction.clone(),
            icl: self.icl.clone(),
            target: target.to_string(),
            locale: self.locale.clone(),
        })
    }

    /// Fails when any selected example equals a dataset (original,
    /// reference) pair.
    pub fn check_disjoint(&self, dataset: &Dataset) -> Result<(), PromptError> {
        check_disjoint(&self.icl, dataset)
    }
}

/// Bundle with the bundled instruction and every example for the locale.
pub fn build_prompt(locale: &Locale, store: &IclStore, target: &str) -> Result<PromptBundle, PromptError> {
    if target.trim().is_empty() {
        return Err(PromptError::EmptyTarget);
    }
    PromptBuilder::new(&InstructionTemplate::default(), store, locale, IclSelection::All)?.build(target)
}

pub fn check_disjoint(icl: &[IclExample], dataset: &Dataset) -> Result<(), PromptError> {
    let pairs: HashSet<(&str, &str)> =
        icl.iter().map(|e| (e.original.trim(), e.normalized.trim())).collect();
    let leaked: Vec<String> = dataset
        .samples
        .iter()
        .filter(|s| pairs.contains(&(s.original.trim(), s.reference.trim())))
        .map(|s| s.id.clone())
        .collect();
    if leaked.is_empty() {
        Ok(())
    } else {
        Err(PromptError::Leakage(leaked))
    }
}
