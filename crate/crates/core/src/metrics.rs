//! Scoring: canonicalization, Levenshtein alignment, WER/CER and BLEU.
//!
//! Texts are canonicalized before comparison so that casing, sentence
//! punctuation and (for German) `ß`/`ss` spelling do not count as errors.
//! Whitespace locales are scored per word, Chinese and Japanese per
//! codepoint.

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::model::Locale;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("cannot compare texts of different locales ({0} vs {1})")]
    LocaleMismatch(String, String),
    #[error("reference is empty after canonicalization; error rate is undefined")]
    EmptyReference,
    #[error("BLEU needs at least one pair")]
    EmptyCorpus,
}

/// Punctuation removed before scoring unless it sits inside a word.
pub const STRIPPED_PUNCTUATION: [char; 10] = ['.', ',', '!', '?', ';', ':', '。', '、', '！', '？'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalText {
    pub locale: Locale,
    pub tokens: Vec<String>,
    pub original: String,
}

impl CanonicalText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn is_word_internal(prev: Option<char>, next: Option<char>, ascii_only: bool) -> bool {
    let wordish = |c: Option<char>| {
        c.is_some_and(|c| if ascii_only { c.is_ascii_alphanumeric() } else { c.is_alphanumeric() })
    };
    wordish(prev) && wordish(next)
}

/// NFKC, lowercase, `ß`→`ss` for German, strip non-internal punctuation,
/// then split into words or codepoints depending on the locale.
pub fn canonicalize(text: &str, locale: &Locale) -> CanonicalText {
    let mut folded: String = text.nfkc().collect::<String>().to_lowercase();
    if locale.tag() == "de-DE" {
        folded = folded.replace('ß', "ss");
    }
    let chars: Vec<char> = folded.chars().collect();
    let ascii_only = !locale.whitespace_delimited();
    let mut kept = String::with_capacity(folded.len());
    for (i, &c) in chars.iter().enumerate() {
        if STRIPPED_PUNCTUATION.contains(&c) {
            let prev = i.checked_sub(1).map(|j| chars[j]);
            let next = chars.get(i + 1).copied();
            if !is_word_internal(prev, next, ascii_only) {
                // Keep word boundaries that the punctuation implied.
                kept.push(' ');
                continue;
            }
        }
        kept.push(c);
    }
    let tokens = if locale.whitespace_delimited() {
        kept.split_whitespace().map(str::to_string).collect()
    } else {
        kept.chars().filter(|c| !c.is_whitespace()).map(String::from).collect()
    };
    CanonicalText { locale: locale.clone(), tokens, original: text.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Match,
    Substitute,
    Delete,
    Insert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignOp {
    pub kind: EditKind,
    pub ref_index: Option<usize>,
    pub hyp_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub matches: usize,
}

impl EditCounts {
    pub fn edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    fn record(&mut self, kind: EditKind) {
        match kind {
            EditKind::Match => self.matches += 1,
            EditKind::Substitute => self.substitutions += 1,
            EditKind::Delete => self.deletions += 1,
            EditKind::Insert => self.insertions += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    pub ops: Vec<AlignOp>,
    pub counts: EditCounts,
}

impl Alignment {
    fn from_ops(ops: Vec<AlignOp>) -> Self {
        let mut counts = EditCounts::default();
        ops.iter().for_each(|op| counts.record(op.kind));
        Alignment { ops, counts }
    }

    pub fn distance(&self) -> usize {
        self.counts.edits()
    }
}

/// Unit-cost Levenshtein alignment. Traceback prefers match, then
/// substitution, deletion, insertion.
pub fn align_tokens<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Alignment {
    let (n, m) = (reference.len(), hypothesis.len());
    let width = m + 1;
    let mut cost = vec![0usize; (n + 1) * width];
    for (j, c) in cost.iter_mut().take(width).enumerate() {
        *c = j;
    }
    for i in 1..=n {
        cost[i * width] = i;
        for j in 1..=m {
            let diag = cost[(i - 1) * width + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let up = cost[(i - 1) * width + j] + 1;
            let left = cost[i * width + j - 1] + 1;
            cost[i * width + j] = diag.min(up).min(left);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * width + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            let diag = cost[(i - 1) * width + j - 1];
            if same && here == diag {
                ops.push(AlignOp { kind: EditKind::Match, ref_index: Some(i - 1), hyp_index: Some(j - 1) });
                i -= 1;
                j -= 1;
                continue;
            }
            if !same && here == diag + 1 {
                ops.push(AlignOp { kind: EditKind::Substitute, ref_index: Some(i - 1), hyp_index: Some(j - 1) });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == cost[(i - 1) * width + j] + 1 {
            ops.push(AlignOp { kind: EditKind::Delete, ref_index: Some(i - 1), hyp_index: None });
            i -= 1;
        } else {
            ops.push(AlignOp { kind: EditKind::Insert, ref_index: None, hyp_index: Some(j - 1) });
            j -= 1;
        }
    }
    ops.reverse();
    Alignment::from_ops(ops)
}

fn same_locale(a: &CanonicalText, b: &CanonicalText) -> Result<(), MetricsError> {
    if a.locale != b.locale {
        return Err(MetricsError::LocaleMismatch(a.locale.to_string(), b.locale.to_string()));
    }
    Ok(())
}

pub fn align(reference: &CanonicalText, hypothesis: &CanonicalText) -> Result<Alignment, MetricsError> {
    same_locale(reference, hypothesis)?;
    Ok(align_tokens(&reference.tokens, &hypothesis.tokens))
}

/// Re-scores runs of edits whose reference and hypothesis tokens spell the
/// same string once spaces are removed ("fünfundvierzig" vs "fünf und
/// vierzig"). Those hypothesis tokens are re-segmented like the reference,
/// so the returned alignment refers to the returned hypothesis tokens.
pub fn merge_spacing_variants(
    reference: &[String],
    hypothesis: &[String],
    alignment: &Alignment,
) -> (Vec<String>, Alignment) {
    let mut tokens = Vec::with_capacity(hypothesis.len());
    let mut ops = Vec::with_capacity(alignment.ops.len());
    let mut k = 0;
    while k < alignment.ops.len() {
        let op = alignment.ops[k];
        if op.kind == EditKind::Match {
            ops.push(AlignOp { hyp_index: Some(tokens.len()), ..op });
            tokens.push(hypothesis[op.hyp_index.expect("match has hyp index")].clone());
            k += 1;
            continue;
        }
        let run_end = alignment.ops[k..]
            .iter()
            .position(|o| o.kind == EditKind::Match)
            .map_or(alignment.ops.len(), |p| k + p);
        let run = &alignment.ops[k..run_end];
        let ref_joined: String = run.iter().filter_map(|o| o.ref_index).map(|i| reference[i].as_str()).collect();
        let hyp_joined: String = run.iter().filter_map(|o| o.hyp_index).map(|i| hypothesis[i].as_str()).collect();
        if !ref_joined.is_empty() && ref_joined == hyp_joined {
            for ref_index in run.iter().filter_map(|o| o.ref_index) {
                ops.push(AlignOp { kind: EditKind::Match, ref_index: Some(ref_index), hyp_index: Some(tokens.len()) });
                tokens.push(reference[ref_index].clone());
            }
        } else {
            for o in run {
                let hyp_index = o.hyp_index.map(|i| {
                    tokens.push(hypothesis[i].clone());
                    tokens.len() - 1
                });
                ops.push(AlignOp { hyp_index, ..*o });
            }
        }
        k = run_end;
    }
    (tokens, Alignment::from_ops(ops))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringOptions {
    /// Treat spacing-only differences inside edit runs as matches.
    pub optional_spacing: bool,
}

impl ScoringOptions {
    /// Optional spacing is on for German only.
    pub fn for_locale(locale: &Locale) -> Self {
        ScoringOptions { optional_spacing: locale.tag() == "de-DE" }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: serde::de::DeserializeOwned"))]
pub struct MetricValue<S> {
    /// WER for whitespace locales, CER otherwise. May exceed 1.
    pub wer_or_cer: S,
    /// Sentence-level BLEU in [0, 1].
    pub bleu: S,
    pub edit_counts: EditCounts,
    pub ref_len: usize,
}

/// Everything computed for one reference/hypothesis pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: serde::de::DeserializeOwned"))]
pub struct PairScore<S> {
    pub ref_tokens: Vec<String>,
    /// Hypothesis tokens after optional re-segmentation.
    pub hyp_tokens: Vec<String>,
    pub alignment: Alignment,
    pub bleu_stats: BleuStats,
    pub metric: MetricValue<S>,
}

pub fn score_pair<S: Scalar>(
    reference: &CanonicalText,
    hypothesis: &CanonicalText,
    options: ScoringOptions,
) -> Result<PairScore<S>, MetricsError> {
    let raw = align(reference, hypothesis)?;
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    let (hyp_tokens, alignment) = if options.optional_spacing {
        merge_spacing_variants(&reference.tokens, &hypothesis.tokens, &raw)
    } else {
        (hypothesis.tokens.clone(), raw)
    };
    let bleu_stats = BleuStats::from_tokens(&reference.tokens, &hyp_tokens);
    let metric = MetricValue {
        wer_or_cer: S::ratio(alignment.distance(), reference.len()),
        bleu: S::approx(bleu_stats.score::<f64>()),
        edit_counts: alignment.counts,
        ref_len: reference.len(),
    };
    Ok(PairScore { ref_tokens: reference.tokens.clone(), hyp_tokens, alignment, bleu_stats, metric })
}

/// `(S + D + I) / N` with the locale's default scoring options. The
/// locale's whitespace flag decides between WER and CER through
/// [`canonicalize`].
pub fn error_rate<S: Scalar>(
    reference: &CanonicalText,
    hypothesis: &CanonicalText,
) -> Result<MetricValue<S>, MetricsError> {
    score_pair(reference, hypothesis, ScoringOptions::for_locale(&reference.locale)).map(|p| p.metric)
}

/// Canonicalize both strings and compute the error rate.
pub fn error_rate_str<S: Scalar>(reference: &str, hypothesis: &str, locale: &Locale) -> Result<MetricValue<S>, MetricsError> {
    error_rate(&canonicalize(reference, locale), &canonicalize(hypothesis, locale))
}

pub const BLEU_MAX_ORDER: usize = 4;
pub const BLEU_EPSILON: f64 = 1e-9;

/// Sufficient statistics for corpus BLEU. Addition is associative, so
/// pairs can be accumulated in any grouping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [u64; BLEU_MAX_ORDER],
    pub totals: [u64; BLEU_MAX_ORDER],
    pub ref_len: u64,
    pub hyp_len: u64,
}

impl std::ops::Add for BleuStats {
    type Output = BleuStats;

    fn add(mut self, other: BleuStats) -> BleuStats {
        for n in 0..BLEU_MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.ref_len += other.ref_len;
        self.hyp_len += other.hyp_len;
        self
    }
}

impl std::iter::Sum for BleuStats {
    fn sum<I: Iterator<Item = BleuStats>>(iter: I) -> BleuStats {
        iter.fold(BleuStats::default(), |a, b| a + b)
    }
}

impl BleuStats {
    /// Clipped n-gram matches of one hypothesis against one reference.
    pub fn from_tokens<T: AsRef<str>>(reference: &[T], hypothesis: &[T]) -> BleuStats {
        use std::collections::HashMap;
        let mut stats = BleuStats { ref_len: reference.len() as u64, hyp_len: hypothesis.len() as u64, ..Default::default() };
        for n in 1..=BLEU_MAX_ORDER {
            if hypothesis.len() < n {
                break;
            }
            let mut ref_counts: HashMap<Vec<&str>, u64> = HashMap::new();
            for gram in reference.windows(n) {
                *ref_counts.entry(gram.iter().map(AsRef::as_ref).collect()).or_default() += 1;
            }
            let mut hyp_counts: HashMap<Vec<&str>, u64> = HashMap::new();
            for gram in hypothesis.windows(n) {
                *hyp_counts.entry(gram.iter().map(AsRef::as_ref).collect()).or_default() += 1;
            }
            stats.totals[n - 1] = (hypothesis.len() + 1 - n) as u64;
            stats.matches[n - 1] = hyp_counts
                .iter()
                .map(|(gram, count)| (*count).min(ref_counts.get(gram).copied().unwrap_or(0)))
                .sum();
        }
        stats
    }

    /// BLEU with uniform weights over the n-gram orders that have at least
    /// one hypothesis n-gram, epsilon-smoothed zero match counts and the
    /// standard brevity penalty.
    pub fn score<F: Float + FromPrimitive>(&self) -> F {
        let f = |x: f64| F::from_f64(x).expect("finite");
        if self.hyp_len == 0 {
            return if self.ref_len == 0 { F::one() } else { F::zero() };
        }
        let orders: Vec<usize> = (0..BLEU_MAX_ORDER).filter(|&n| self.totals[n] > 0).collect();
        let log_precision = orders
            .iter()
            .map(|&n| {
                let matched = if self.matches[n] == 0 { f(BLEU_EPSILON) } else { f(self.matches[n] as f64) };
                (matched / f(self.totals[n] as f64)).ln()
            })
            .fold(F::zero(), |a, b| a + b)
            / f(orders.len() as f64);
        let brevity = if self.hyp_len >= self.ref_len {
            F::one()
        } else {
            (F::one() - f(self.ref_len as f64) / f(self.hyp_len as f64)).exp()
        };
        brevity * log_precision.exp()
    }
}

/// Corpus-level BLEU over canonical tokens.
pub fn bleu<F: Float + FromPrimitive>(pairs: &[(CanonicalText, CanonicalText)]) -> Result<F, MetricsError> {
    let (first, _) = pairs.first().ok_or(MetricsError::EmptyCorpus)?;
    let mut stats = BleuStats::default();
    for (reference, hypothesis) in pairs {
        same_locale(first, reference)?;
        same_locale(reference, hypothesis)?;
        stats = stats + BleuStats::from_tokens(&reference.tokens, &hypothesis.tokens);
    }
    Ok(stats.score())
}
