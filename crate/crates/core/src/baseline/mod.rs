//! Rule-based English normalizer used as the comparison baseline.
//!
//! Input is split into spans by a fixed priority list of patterns
//! (date > time > currency > telephone > sports_score > ordinal > decimal >
//! cardinal); everything else is plain text. Each classified span is
//! verbalized by its rule's renderer.

mod words;

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::{Category, Locale};

pub use words::{
    digits_individually, verbalize_cardinal, verbalize_ordinal, verbalize_year, CARDINAL_LIMIT,
    ORDINAL_LIMIT,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BaselineError {
    #[error("value {value} is outside the supported range (< {limit})")]
    OutOfRange { value: u64, limit: u64 },
    #[error("cannot parse date {0:?}")]
    Date(String),
    #[error("cannot verbalize {0:?}")]
    Unverbalizable(String),
    #[error("the rule-based baseline only supports English, not {0}")]
    UnsupportedLocale(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    PlainText,
    Class(Category),
}

/// A classified stretch of input. Offsets are in codepoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub kind: SpanKind,
    pub surface: String,
}

type Renderer = fn(&str) -> Result<String, BaselineError>;

/// One classification rule. Rules are tried in [`RULES`] order and the
/// first whose pattern matches at a token boundary wins.
pub struct VerbalizationRule {
    pub category: Category,
    pub pattern: &'static str,
    matcher: LazyLock<Regex>,
    render: Renderer,
}

macro_rules! rule {
    ($category:expr, $pattern:literal, $render:expr) => {
        VerbalizationRule {
            category: $category,
            pattern: $pattern,
            matcher: LazyLock::new(|| Regex::new(concat!("^(?:", $pattern, ")")).expect("valid rule pattern")),
            render: $render,
        }
    };
}

pub static RULES: [VerbalizationRule; 9] = [
    rule!(Category::Date, r"(?:1[0-2]|0?[1-9])/(?:3[01]|[12]\d|0?[1-9])(?:/\d{4})?", render_date),
    rule!(Category::Date, r"1\d{3}|20\d{2}", render_date),
    rule!(Category::Time, r"(?i)(?:[01]?\d|2[0-3]):[0-5]\d(?:\s?(?:a\.m\.|p\.m\.|am|pm)\b)?", render_time),
    rule!(Category::Currency, r"[$€£](?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d{2})?", render_currency),
    rule!(Category::Telephone, r"\(\d{3}\)\s?\d{3}-\d{4}|\d{3}-\d{3}-\d{4}|\d{3}-\d{4}", render_telephone),
    rule!(Category::SportsScore, r"\d{1,3}-\d{1,3}", render_sports_score),
    rule!(Category::Ordinal, r"(?i)(?:\d{1,3}(?:,\d{3})+|\d+)(?:st|nd|rd|th)", render_ordinal),
    rule!(Category::Decimal, r"(?:\d{1,3}(?:,\d{3})+|\d+)\.\d+", render_decimal),
    rule!(Category::Cardinal, r"\d{1,3}(?:,\d{3})+|\d+", render_cardinal),
];

fn parse_number(s: &str) -> Result<u64, BaselineError> {
    let digits: String = s.chars().filter(char::is_ascii_digit).collect();
    digits.parse().map_err(|_| BaselineError::Unverbalizable(s.to_string()))
}

fn render_cardinal(s: &str) -> Result<String, BaselineError> {
    verbalize_cardinal(parse_number(s)?)
}

fn render_ordinal(s: &str) -> Result<String, BaselineError> {
    verbalize_ordinal(parse_number(s.trim_end_matches(char::is_alphabetic))?)
}

fn render_decimal(s: &str) -> Result<String, BaselineError> {
    let (int, frac) = s.split_once('.').ok_or_else(|| BaselineError::Unverbalizable(s.into()))?;
    Ok(format!("{} point {}", render_cardinal(int)?, digits_individually(frac)))
}

fn render_sports_score(s: &str) -> Result<String, BaselineError> {
    let (a, b) = s.split_once('-').ok_or_else(|| BaselineError::Unverbalizable(s.into()))?;
    Ok(format!("{} to {}", render_cardinal(a)?, render_cardinal(b)?))
}

fn render_telephone(s: &str) -> Result<String, BaselineError> {
    Ok(digits_individually(s))
}

fn render_currency(s: &str) -> Result<String, BaselineError> {
    let mut chars = s.chars();
    let symbol = chars.next().ok_or_else(|| BaselineError::Unverbalizable(s.into()))?;
    let amount = chars.as_str();
    let (major_name, minor_name) = match symbol {
        '$' => (("dollar", "dollars"), ("cent", "cents")),
        '€' => (("euro", "euros"), ("cent", "cents")),
        '£' => (("pound", "pounds"), ("penny", "pence")),
        _ => return Err(BaselineError::Unverbalizable(s.into())),
    };
    let (major, minor) = match amount.split_once('.') {
        Some((major, minor)) => (parse_number(major)?, parse_number(minor)?),
        None => (parse_number(amount)?, 0),
    };
    let pick = |n: u64, (one, many): (&'static str, &'static str)| if n == 1 { one } else { many };
    let mut out = format!("{} {}", verbalize_cardinal(major)?, pick(major, major_name));
    if minor > 0 {
        out.push_str(&format!(" {} {}", verbalize_cardinal(minor)?, pick(minor, minor_name)));
    }
    Ok(out)
}

fn render_time(s: &str) -> Result<String, BaselineError> {
    let bad = || BaselineError::Unverbalizable(s.to_string());
    let (hour, rest) = s.split_once(':').ok_or_else(bad)?;
    let minute = &rest[..2];
    let meridiem = rest[2..].trim().to_ascii_lowercase().replace('.', "");
    let hour: u64 = hour.parse().map_err(|_| bad())?;
    let minute: u64 = minute.parse().map_err(|_| bad())?;
    let mut out = verbalize_cardinal(hour)?;
    match minute {
        0 if !meridiem.is_empty() => {}
        0 if hour <= 12 => out.push_str(" o'clock"),
        0 => out.push_str(" hundred"),
        1..=9 => out.push_str(&format!(" oh {}", verbalize_cardinal(minute)?)),
        _ => out.push_str(&format!(" {}", verbalize_cardinal(minute)?)),
    }
    match meridiem.as_str() {
        "" => {}
        "am" => out.push_str(" a m"),
        "pm" => out.push_str(" p m"),
        _ => return Err(bad()),
    }
    Ok(out)
}

fn render_date(s: &str) -> Result<String, BaselineError> {
    verbalize_date(s)
}

/// Month-day(-year) or bare year: "4/18" -> "april eighteenth",
/// "05/20/2023" -> "may twentieth twenty twenty three", "2020" ->
/// "twenty twenty".
pub fn verbalize_date(surface: &str) -> Result<String, BaselineError> {
    let bad = || BaselineError::Date(surface.to_string());
    let parts: Vec<&str> = surface.trim().split('/').collect();
    let number = |p: &str| -> Result<u32, BaselineError> {
        if p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        p.parse().map_err(|_| bad())
    };
    match parts.as_slice() {
        [year] => {
            let y = number(year)?;
            if year.len() != 4 || !(1000..=2099).contains(&y) {
                return Err(bad());
            }
            verbalize_year(u64::from(y))
        }
        [month, day, rest @ ..] if rest.len() <= 1 => {
            let (m, d) = (number(month)?, number(day)?);
            if !(1..=12).contains(&m) || d == 0 || d > words::days_in_month(m) {
                return Err(bad());
            }
            let mut out = format!("{} {}", words::MONTHS[(m - 1) as usize], verbalize_ordinal(u64::from(d))?);
            if let [year] = rest {
                if year.len() != 4 {
                    return Err(bad());
                }
                out.push(' ');
                out.push_str(&verbalize_year(u64::from(number(year)?))?);
            }
            Ok(out)
        }
        _ => Err(bad()),
    }
}

const NUMERIC_GLUE: [char; 5] = ['.', ',', '/', ':', '-'];

/// A number may not be split off a longer alphanumeric or numeric token
/// such as "mp3", "1.2.3" or "1-800-555".
fn is_boundary(near: Option<char>, beyond: Option<char>) -> bool {
    match near {
        None => true,
        Some(c) if c.is_alphanumeric() => false,
        Some(c) if NUMERIC_GLUE.contains(&c) => !beyond.is_some_and(|b| b.is_ascii_digit()),
        Some(_) => true,
    }
}

/// Split `text` into classified and plain spans that tile the input.
pub fn classify_spans(text: &str) -> Vec<Span> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let at = |i: usize| chars.get(i).map(|(_, c)| *c);
    let mut spans = Vec::new();
    let mut plain_start: Option<usize> = None;
    let mut i = 0;
    let flush_plain = |spans: &mut Vec<Span>, from: Option<usize>, to: usize| {
        if let Some(from) = from {
            let start_byte = chars[from].0;
            let end_byte = chars.get(to).map_or(text.len(), |(b, _)| *b);
            spans.push(Span {
                start: from,
                end: to,
                kind: SpanKind::PlainText,
                surface: text[start_byte..end_byte].to_string(),
            });
        }
    };
    while i < chars.len() {
        let before = i.checked_sub(1).and_then(at);
        let before2 = i.checked_sub(2).and_then(at);
        let mut matched = None;
        if is_boundary(before, before2) {
            let rest = &text[chars[i].0..];
            matched = RULES.iter().find_map(|rule| {
                let m = rule.matcher.find(rest)?;
                let len = rest[..m.end()].chars().count();
                is_boundary(at(i + len), at(i + len + 1)).then_some((rule.category, len, m.end()))
            });
        }
        match matched {
            Some((category, len, byte_len)) => {
                flush_plain(&mut spans, plain_start.take(), i);
                let start_byte = chars[i].0;
                spans.push(Span {
                    start: i,
                    end: i + len,
                    kind: SpanKind::Class(category),
                    surface: text[start_byte..start_byte + byte_len].to_string(),
                });
                i += len;
            }
            None => {
                plain_start.get_or_insert(i);
                i += 1;
            }
        }
    }
    flush_plain(&mut spans, plain_start, chars.len());
    spans
}

fn rule_for(surface: &str, category: Category) -> Option<&'static VerbalizationRule> {
    RULES.iter().find(|r| r.category == category && r.matcher.find(surface).is_some_and(|m| m.end() == surface.len()))
}

/// Verbalize one classified span.
pub fn verbalize_span(span: &Span) -> Result<String, BaselineError> {
    match span.kind {
        SpanKind::PlainText => Ok(span.surface.clone()),
        SpanKind::Class(category) => {
            let rule = rule_for(&span.surface, category)
                .ok_or_else(|| BaselineError::Unverbalizable(span.surface.clone()))?;
            (rule.render)(&span.surface)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalized {
    pub text: String,
    pub spans: Vec<Span>,
    /// Classified spans whose renderer failed; they pass through unchanged.
    pub unverbalized: Vec<Span>,
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn normalize_detailed(text: &str) -> Normalized {
    let spans = classify_spans(text);
    let mut out = String::with_capacity(text.len() * 2);
    let mut unverbalized = Vec::new();
    for span in &spans {
        match verbalize_span(span) {
            Ok(rendered) => out.push_str(&rendered),
            Err(_) => {
                out.push_str(&span.surface);
                unverbalized.push(span.clone());
            }
        }
    }
    Normalized { text: collapse_whitespace(&out), spans, unverbalized }
}

/// Spoken form of an English sentence.
pub fn normalize_sentence(text: &str) -> String {
    normalize_detailed(text).text
}

/// Locale-gated entry point; only English is implemented.
#[derive(Debug, Clone)]
pub struct Baseline {
    locale: Locale,
}

impl Baseline {
    pub const SYSTEM_ID: &'static str = "baseline";

    pub fn new(locale: &Locale) -> Result<Self, BaselineError> {
        if !locale.tag().starts_with("en-") {
            return Err(BaselineError::UnsupportedLocale(locale.to_string()));
        }
        Ok(Baseline { locale: locale.clone() })
    }

    pub fn locale(&self) -> &Locale {
        &self.locale
    }

    pub fn normalize(&self, text: &str) -> String {
        normalize_sentence(text)
    }
}
