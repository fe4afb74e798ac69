//! Shared domain vocabulary: locales, the 27 normalization categories,
//! benchmark samples, in-context examples and run configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("malformed locale tag {0:?}: expected `ll-RR`, e.g. en-US")]
    MalformedLocale(String),
    #[error("unknown category {name:?}; valid categories: {valid}")]
    UnknownCategory { name: String, valid: String },
    #[error("unknown provenance {0:?}; expected kestrel_translated, synthetic or expert_authored")]
    UnknownProvenance(String),
}

/// Language-region identifier plus the tokenization flag scoring depends on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Locale {
    tag: String,
    whitespace_delimited: bool,
}

/// The eight benchmark locales, their display names and whitespace flag.
const KNOWN_LOCALES: [(&str, &str, bool); 8] = [
    ("en-US", "American English", true),
    ("de-DE", "German", true),
    ("fr-FR", "French", true),
    ("es-MX", "Mexican Spanish", true),
    ("it-IT", "Italian", true),
    ("lt-LT", "Lithuanian", true),
    ("ja-JP", "Japanese", false),
    ("zh-CN", "Mandarin Chinese", false),
];

impl Locale {
    pub fn parse(tag: &str) -> Result<Self, ModelError> {
        parse_locale(tag)
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn whitespace_delimited(&self) -> bool {
        self.whitespace_delimited
    }

    /// Language name used in prompts and report tables; falls back to the tag.
    pub fn display_name(&self) -> &str {
        KNOWN_LOCALES
            .iter()
            .find(|(tag, _, _)| *tag == self.tag)
            .map(|(_, name, _)| *name)
            .unwrap_or(&self.tag)
    }

    /// The eight locales the benchmark ships.
    pub fn known() -> Vec<Locale> {
        KNOWN_LOCALES
            .iter()
            .map(|(tag, _, ws)| Locale { tag: (*tag).to_string(), whitespace_delimited: *ws })
            .collect()
    }
}

/// Parse an `ll-RR` tag. Unknown but well-formed tags are treated as
/// whitespace-delimited.
pub fn parse_locale(tag: &str) -> Result<Locale, ModelError> {
    let bytes = tag.as_bytes();
    let well_formed = bytes.len() == 5
        && bytes[0].is_ascii_lowercase()
        && bytes[1].is_ascii_lowercase()
        && bytes[2] == b'-'
        && bytes[3].is_ascii_uppercase()
        && bytes[4].is_ascii_uppercase();
    if !well_formed {
        return Err(ModelError::MalformedLocale(tag.to_string()));
    }
    let whitespace_delimited =
        KNOWN_LOCALES.iter().find(|(known, _, _)| *known == tag).is_none_or(|(_, _, ws)| *ws);
    Ok(Locale { tag: tag.to_string(), whitespace_delimited })
}

impl fmt::Display for Locale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag)
    }
}

impl FromStr for Locale {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_locale(s)
    }
}

impl Serialize for Locale {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.tag)
    }
}

impl<'de> Deserialize<'de> for Locale {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let tag = String::deserialize(deserializer)?;
        parse_locale(&tag).map_err(serde::de::Error::custom)
    }
}

macro_rules! categories {
    ($( $variant:ident => $id:literal, $display:literal, $prompt:literal; )*) => {
        /// One of the 27 normalization categories, declared in benchmark
        /// table order (which is also the ICL selection order).
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Category {
            $( $variant, )*
        }

        impl Category {
            pub const ALL: [Category; 27] = [ $( Category::$variant, )* ];

            /// Canonical snake_case identifier.
            pub fn as_str(self) -> &'static str {
                match self { $( Category::$variant => $id, )* }
            }

            /// Name as printed in the benchmark category table.
            pub fn display_name(self) -> &'static str {
                match self { $( Category::$variant => $display, )* }
            }

            /// Wording used for this category in the instruction prompt's list.
            pub fn prompt_label(self) -> &'static str {
                match self { $( Category::$variant => $prompt, )* }
            }
        }
    };
}

categories! {
    Cardinal => "cardinal", "Cardinal", "Cardinal";
    Date => "date", "Date", "Date";
    Decimal => "decimal", "Decimal", "Decimal";
    Ordinal => "ordinal", "Ordinal", "Ordinal";
    Fraction => "fraction", "Fraction", "Fraction";
    Time => "time", "Time", "Time";
    Currency => "currency", "Currency", "Currency";
    Unit => "unit", "Unit (Measure)", "Unit (Measure)";
    Address => "address", "Address", "Address";
    AcronymInitialism => "acronym_initialism", "Acronym/Initialism", "Initialism or Acronym";
    Isbn => "isbn", "ISBN", "ISBN";
    BiologicalClassification => "biological_classification", "Biological Classification", "Biological Classification";
    RomanNumeral => "roman_numeral", "Roman Numeral", "Roman Numeral";
    Telephone => "telephone", "Telephone", "Telephone";
    SportsScore => "sports_score", "Sports Score", "Sports Score";
    MathExpression => "math_expression", "Mathematical Expression", "Mathematical Expression";
    Symbol => "symbol", "Symbol", "Symbol";
    Abbreviation => "abbreviation", "Abbreviations", "Abbreviation";
    ChemicalFormula => "chemical_formula", "Chemical Formula", "Chemical Formula";
    LegalReference => "legal_reference", "Legal Reference", "Legal Reference";
    VehicleProductCode => "vehicle_product_code", "Vehicle/Product Code", "Vehicle or Product Code";
    GeoCoordinates => "geo_coordinates", "Geographic Coordinates", "Geographic Coordinates";
    VersionNumber => "version_number", "Version Number", "Version Number";
    LicenseSerial => "license_serial", "License/Serial Number", "License Plate or Serial Number";
    MusicalNotation => "musical_notation", "Musical Notation", "Musical Notation";
    StockTicker => "stock_ticker", "Stock Ticker", "Stock Ticker";
    Electronic => "electronic", "Electronic (URL/Email)", "Electronic Address (URL or Email)";
}

/// Extra accepted spellings, already in lookup-key form.
const CATEGORY_ALIASES: [(&str, Category); 2] =
    [("measure", Category::Unit), ("url_email", Category::Electronic)];

/// Lowercase, and fold any run of spaces, hyphens, slashes and parentheses
/// to a single underscore: "Sports Score" -> "sports_score",
/// "Unit (Measure)" -> "unit_measure".
fn category_key(name: &str) -> String {
    let mut key = String::with_capacity(name.len());
    let mut pending_sep = false;
    for c in name.trim().chars() {
        if c.is_alphanumeric() {
            if pending_sep && !key.is_empty() {
                key.push('_');
            }
            pending_sep = false;
            key.extend(c.to_lowercase());
        } else {
            pending_sep = true;
        }
    }
    key
}

/// Case-insensitive category lookup over canonical ids, table display
/// names, prompt labels and the alias table.
pub fn parse_category(name: &str) -> Result<Category, ModelError> {
    let key = category_key(name);
    let found = Category::ALL.iter().copied().find(|c| {
        key == c.as_str()
            || key == category_key(c.display_name())
            || key == category_key(c.prompt_label())
    });
    found
        .or_else(|| CATEGORY_ALIASES.iter().find(|(alias, _)| *alias == key).map(|(_, c)| *c))
        .ok_or_else(|| ModelError::UnknownCategory {
            name: name.to_string(),
            valid: Category::ALL.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", "),
        })
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_category(s)
    }
}

impl Serialize for Category {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        parse_category(&name).map_err(serde::de::Error::custom)
    }
}

/// One benchmark row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub locale: Locale,
    pub category: Category,
    pub original: String,
    pub reference: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    KestrelTranslated,
    Synthetic,
    ExpertAuthored,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::KestrelTranslated => "kestrel_translated",
            Provenance::Synthetic => "synthetic",
            Provenance::ExpertAuthored => "expert_authored",
        }
    }
}

impl FromStr for Provenance {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kestrel_translated" => Ok(Provenance::KestrelTranslated),
            "synthetic" => Ok(Provenance::Synthetic),
            "expert_authored" => Ok(Provenance::ExpertAuthored),
            _ => Err(ModelError::UnknownProvenance(s.to_string())),
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A curated (original, normalized) demonstration pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IclExample {
    pub locale: Locale,
    pub category: Category,
    pub original: String,
    pub normalized: String,
    pub provenance: Provenance,
}

/// Order-insensitive SHA-256 digest of an ICL example set, hex encoded.
pub fn icl_set_hash<'a, I>(examples: I) -> String
where
    I: IntoIterator<Item = &'a IclExample>,
{
    let mut lines: Vec<String> = examples
        .into_iter()
        .map(|e| {
            // JSON strings escape separators, so the line encoding is injective.
            serde_json::to_string(&(
                e.locale.tag(),
                e.category.as_str(),
                &e.original,
                &e.normalized,
                e.provenance.as_str(),
            ))
            .expect("tuple of strings serializes")
        })
        .collect();
    lines.sort_unstable();
    let mut hasher = Sha256::new();
    for line in &lines {
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding { temperature: 0.0, max_tokens: 1024 }
    }
}

/// Identity of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub locale: Locale,
    pub system_id: String,
    pub iteration: u32,
    pub icl_set_hash: String,
    pub decoding: Decoding,
}
