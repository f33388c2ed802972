//! Shared domain types: person records, embedding vectors, tiers, Bloom levels.
//!
//! Every other module speaks in these types. They are plain immutable values.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

const NATIONALITY_MAP: &str = include_str!("../data/nationality_map.tsv");
const COUNTRY_LANGUAGE: &str = include_str!("../data/country_language.tsv");

/// Maximum number of image URLs kept per person.
pub const MAX_IMAGES: usize = 2;

/// Birth date with mandatory year. All date arithmetic uses the year only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BirthDate {
    pub year: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub month: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub day: Option<u8>,
}

impl BirthDate {
    pub fn year(year: i32) -> Self {
        Self { year, month: None, day: None }
    }

    /// Checks month/day ranges, including month lengths (Feb 29 only in leap years).
    pub fn is_valid(&self) -> bool {
        match (self.month, self.day) {
            (None, None) => true,
            (None, Some(_)) => false,
            (Some(m), None) => (1..=12).contains(&m),
            (Some(m), Some(d)) => (1..=12).contains(&m) && d >= 1 && d <= days_in_month(self.year, m),
        }
    }
}

fn days_in_month(year: i32, month: u8) -> u8 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 => {
            let leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
            if leap {
                29
            } else {
                28
            }
        }
        _ => 0,
    }
}

impl fmt::Display for BirthDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.year < 0 {
            write!(f, "-{:04}", -(self.year as i64))?;
        } else {
            write!(f, "{:04}", self.year)?;
        }
        if let Some(m) = self.month {
            write!(f, "-{m:02}")?;
            if let Some(d) = self.day {
                write!(f, "-{d:02}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for BirthDate {
    type Err = RecordRejection;

    /// Accepts `YYYY`, `YYYY-MM`, `YYYY-MM-DD`, with an optional leading `-` for BCE years.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = || RecordRejection::MalformedDate(s.to_string());
        let t = s.trim();
        let (neg, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let mut parts = body.split('-');
        let year_str = parts.next().ok_or_else(malformed)?;
        if year_str.is_empty() || year_str.len() > 6 || !year_str.bytes().all(|b| b.is_ascii_digit()) {
            return Err(malformed());
        }
        let mut year: i32 = year_str.parse().map_err(|_| malformed())?;
        if neg {
            year = -year;
        }
        let num = |p: Option<&str>| -> Result<Option<u8>, RecordRejection> {
            match p {
                None => Ok(None),
                Some(x) if x.len() == 2 && x.bytes().all(|b| b.is_ascii_digit()) => {
                    Ok(Some(x.parse().map_err(|_| malformed())?))
                }
                Some(_) => Err(malformed()),
            }
        };
        let month = num(parts.next())?;
        let day = num(parts.next())?;
        if parts.next().is_some() {
            return Err(malformed());
        }
        let date = BirthDate { year, month, day };
        if date.is_valid() {
            Ok(date)
        } else {
            Err(malformed())
        }
    }
}

/// One deduplicated individual in the knowledge store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonRecord {
    pub qid: String,
    /// Language code (BCP-47 primary subtag) to name.
    pub names: BTreeMap<String, String>,
    pub biography: String,
    pub birth_date: BirthDate,
    pub birthplace: String,
    /// ISO 3166-1 alpha-2 code of the modern country.
    pub nationality: String,
    /// Annual page views.
    pub popularity: u64,
    #[serde(default)]
    pub image_urls: Vec<String>,
}

impl PersonRecord {
    /// Preferred display name: the given language, then English, then the first entry.
    pub fn display_name(&self, lang: Option<&str>) -> &str {
        lang.and_then(|l| self.names.get(l))
            .or_else(|| self.names.get("en"))
            .or_else(|| self.names.values().next())
            .map(String::as_str)
            .unwrap_or(self.qid.as_str())
    }
}

/// A partially filled record as it comes out of extraction or a loose JSONL file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPerson {
    pub qid: String,
    #[serde(default)]
    pub names: BTreeMap<String, String>,
    #[serde(default)]
    pub biography: Option<String>,
    /// Unparsed date text (`YYYY[-MM[-DD]]`).
    #[serde(default)]
    pub birth_date: Option<String>,
    #[serde(default)]
    pub birthplace: Option<String>,
    #[serde(default)]
    pub nationality: Option<String>,
    #[serde(default)]
    pub popularity: Option<u64>,
    #[serde(default)]
    pub image_urls: Vec<String>,
}

impl From<&PersonRecord> for RawPerson {
    fn from(r: &PersonRecord) -> Self {
        RawPerson {
            qid: r.qid.clone(),
            names: r.names.clone(),
            biography: Some(r.biography.clone()),
            birth_date: Some(r.birth_date.to_string()),
            birthplace: Some(r.birthplace.clone()),
            nationality: Some(r.nationality.clone()),
            popularity: Some(r.popularity),
            image_urls: r.image_urls.clone(),
        }
    }
}

/// Record fields that the completeness rule requires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Qid,
    Names,
    Biography,
    BirthDate,
    Birthplace,
    Nationality,
    Popularity,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Field::Qid => "qid",
            Field::Names => "names",
            Field::Biography => "biography",
            Field::BirthDate => "birth_date",
            Field::Birthplace => "birthplace",
            Field::Nationality => "nationality",
            Field::Popularity => "popularity",
        };
        f.write_str(s)
    }
}

/// Why a record was not admitted to the store.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "rule", content = "detail", rename_all = "snake_case")]
pub enum RecordRejection {
    #[error("missing field `{0}`")]
    MissingField(Field),
    #[error("zero page views")]
    ZeroPopularity,
    #[error("malformed date `{0}`")]
    MalformedDate(String),
    #[error("nationality `{0}` does not map to a modern country code")]
    UnknownNationality(String),
    #[error("{0} image URLs, at most 2 allowed")]
    TooManyImages(usize),
    #[error("no Q-ID mapping for name `{0}`")]
    NoQid(String),
}

fn present(v: &Option<String>) -> Option<&str> {
    v.as_deref().map(str::trim).filter(|s| !s.is_empty())
}

/// Turns a raw record into a validated [`PersonRecord`], or names the first rule it breaks.
///
/// Rules are checked in a fixed order: qid, names, biography, birth date,
/// birthplace, nationality, popularity, images.
pub fn validate_record(raw: &RawPerson) -> Result<PersonRecord, RecordRejection> {
    use RecordRejection::*;
    let qid = raw.qid.trim();
    if qid.is_empty() {
        return Err(MissingField(Field::Qid));
    }
    let mut names = BTreeMap::new();
    for (lang, name) in &raw.names {
        let name = collapse_whitespace(name);
        let lang = primary_subtag(lang);
        if !name.is_empty() && !lang.is_empty() {
            names.entry(lang).or_insert(name);
        }
    }
    if names.is_empty() {
        return Err(MissingField(Field::Names));
    }
    let biography = present(&raw.biography).ok_or(MissingField(Field::Biography))?;
    let date_text = present(&raw.birth_date).ok_or(MissingField(Field::BirthDate))?;
    let birthplace = present(&raw.birthplace).ok_or(MissingField(Field::Birthplace))?;
    let nationality_text = present(&raw.nationality).ok_or(MissingField(Field::Nationality))?;
    let birth_date: BirthDate = date_text.parse()?;
    let nationality = normalize_nationality(nationality_text)
        .ok_or_else(|| UnknownNationality(nationality_text.to_string()))?;
    let popularity = match raw.popularity {
        None => return Err(MissingField(Field::Popularity)),
        Some(0) => return Err(ZeroPopularity),
        Some(p) => p,
    };
    if raw.image_urls.len() > MAX_IMAGES {
        return Err(TooManyImages(raw.image_urls.len()));
    }
    Ok(PersonRecord {
        qid: qid.to_string(),
        names,
        biography: biography.to_string(),
        birth_date,
        birthplace: birthplace.to_string(),
        nationality: nationality.to_string(),
        popularity,
        image_urls: raw.image_urls.iter().map(|u| u.trim().to_string()).collect(),
    })
}

/// Popularity stratum within one country.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopularityTier {
    High,
    Medium,
    Low,
}

impl PopularityTier {
    pub const ALL: [PopularityTier; 3] = [Self::High, Self::Medium, Self::Low];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::High => "high",
            Self::Medium => "medium",
            Self::Low => "low",
        }
    }
}

impl fmt::Display for PopularityTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The six cognitive levels, lowest to highest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BloomLevel {
    Remembering,
    Understanding,
    Applying,
    Analyzing,
    Evaluating,
    Creating,
}

impl BloomLevel {
    pub const ALL: [BloomLevel; 6] = [
        Self::Remembering,
        Self::Understanding,
        Self::Applying,
        Self::Analyzing,
        Self::Evaluating,
        Self::Creating,
    ];

    /// 1 (Remembering) through 6 (Creating).
    pub fn ordinal(self) -> u8 {
        self as u8 + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Remembering => "Remembering",
            Self::Understanding => "Understanding",
            Self::Applying => "Applying",
            Self::Analyzing => "Analyzing",
            Self::Evaluating => "Evaluating",
            Self::Creating => "Creating",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::Remembering => "recall facts and basic concepts",
            Self::Understanding => "explain ideas or concepts",
            Self::Applying => "use information in new situations",
            Self::Analyzing => "draw connections among ideas, compare and contrast",
            Self::Evaluating => "justify a stand or decision, critique",
            Self::Creating => "produce new or original work",
        }
    }
}

impl fmt::Display for BloomLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BloomLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Self::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(t))
            .ok_or_else(|| format!("unknown Bloom level `{s}`"))
    }
}

/// English or the subject's original language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LanguageVariant {
    English,
    Original,
}

impl LanguageVariant {
    pub const ALL: [LanguageVariant; 2] = [Self::English, Self::Original];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::English => "english",
            Self::Original => "original",
        }
    }
}

impl fmt::Display for LanguageVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LanguageVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "english" | "en" => Ok(Self::English),
            "original" | "org" | "native" => Ok(Self::Original),
            _ => Err(format!("unknown language variant `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VectorError {
    #[error("vector has zero or non-finite norm")]
    Degenerate,
    #[error("dimension must be positive")]
    Empty,
}

/// Fixed-dimension, L2-normalized vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Normalizes `values` to unit length.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, VectorError> {
        if values.is_empty() {
            return Err(VectorError::Empty);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(VectorError::Degenerate);
        }
        for v in &mut values {
            *v /= norm;
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity; both sides are unit vectors so this is the dot product.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.values, &other.values)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Grouping key for names: NFKC, lowercased, whitespace collapsed to single spaces.
pub fn canonical_name(name: &str) -> String {
    let folded: String = name.nfkc().flat_map(char::to_lowercase).collect();
    let folded: String = folded.nfkc().collect();
    collapse_whitespace(&folded)
}

pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `"pt-BR"` → `"pt"`. Lowercased; underscores are treated as separators too.
pub fn primary_subtag(code: &str) -> String {
    code.trim()
        .split(['-', '_'])
        .next()
        .unwrap_or("")
        .to_ascii_lowercase()
}

fn nationality_table() -> &'static HashMap<String, &'static str> {
    static TABLE: OnceLock<HashMap<String, &'static str>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut m = HashMap::new();
        for line in NATIONALITY_MAP.lines() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            if let Some((name, code)) = line.split_once('\t') {
                let code = code.trim();
                m.insert(canonical_name(name), code);
                m.insert(code.to_ascii_lowercase(), code);
            }
        }
        m
    })
}

/// Maps a country name, historical state, or alpha-2 code to a modern alpha-2 code.
pub fn normalize_nationality(text: &str) -> Option<&'static str> {
    nationality_table().get(&canonical_name(text)).copied()
}

/// All names (current and historical) in the shipped nationality table.
pub fn nationality_names() -> impl Iterator<Item = &'static str> {
    NATIONALITY_MAP
        .lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split_once('\t').map(|(n, _)| n))
}

/// Primary language of a country, if the shipped table lists it.
pub fn country_language(code: &str) -> Option<&'static str> {
    static TABLE: OnceLock<HashMap<&'static str, &'static str>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        COUNTRY_LANGUAGE
            .lines()
            .filter(|l| !l.starts_with('#'))
            .filter_map(|l| l.split_once('\t'))
            .map(|(c, l)| (c.trim(), l.trim()))
            .collect()
    });
    table.get(code.to_ascii_uppercase().as_str()).copied()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_raw() -> RawPerson {
        RawPerson {
            qid: "Q7186".into(),
            names: BTreeMap::from([("en".to_string(), "Marie Curie".to_string())]),
            biography: Some("Physicist and chemist.".into()),
            birth_date: Some("1867-11-07".into()),
            birthplace: Some("Warsaw".into()),
            nationality: Some("Poland".into()),
            popularity: Some(154),
            image_urls: vec![],
        }
    }

    #[test]
    fn accepts_complete_record() {
        let rec = validate_record(&full_raw()).unwrap();
        assert_eq!(rec.popularity, 154);
        assert_eq!(rec.nationality, "PL");
        assert_eq!(rec.birth_date, BirthDate { year: 1867, month: Some(11), day: Some(7) });
    }

    #[test]
    fn rejects_zero_popularity() {
        let raw = RawPerson { popularity: Some(0), ..full_raw() };
        assert_eq!(validate_record(&raw), Err(RecordRejection::ZeroPopularity));
    }

    #[test]
    fn rejects_missing_birthplace() {
        let raw = RawPerson { birthplace: None, ..full_raw() };
        assert_eq!(validate_record(&raw), Err(RecordRejection::MissingField(Field::Birthplace)));
        let blank = RawPerson { birthplace: Some("  ".into()), ..full_raw() };
        assert_eq!(validate_record(&blank), Err(RecordRejection::MissingField(Field::Birthplace)));
    }

    #[test]
    fn first_failed_rule_is_reported() {
        let raw = RawPerson { biography: None, birthplace: None, popularity: Some(0), ..full_raw() };
        assert_eq!(validate_record(&raw), Err(RecordRejection::MissingField(Field::Biography)));
    }

    #[test]
    fn malformed_dates() {
        for bad in ["18x7", "1867-13", "1867-02-30", "1867-1-1", "", "1867-11-07-01"] {
            let raw = RawPerson { birth_date: Some(bad.into()), ..full_raw() };
            let err = validate_record(&raw).unwrap_err();
            assert!(
                matches!(err, RecordRejection::MalformedDate(_) | RecordRejection::MissingField(Field::BirthDate)),
                "{bad}: {err:?}"
            );
        }
        assert_eq!("-0044".parse::<BirthDate>().unwrap().year, -44);
        assert_eq!("2000-02-29".parse::<BirthDate>().unwrap().day, Some(29));
        assert!("1900-02-29".parse::<BirthDate>().is_err());
    }

    #[test]
    fn validation_is_idempotent() {
        let rec = validate_record(&full_raw()).unwrap();
        let again = validate_record(&RawPerson::from(&rec)).unwrap();
        assert_eq!(rec, again);
    }

    #[test]
    fn historical_nationalities_map_to_modern_codes() {
        assert_eq!(normalize_nationality("Prussia"), Some("DE"));
        assert_eq!(normalize_nationality("kingdom of  prussia"), Some("DE"));
        assert_eq!(normalize_nationality("fr"), Some("FR"));
        assert_eq!(normalize_nationality("Atlantis"), None);
    }

    #[test]
    fn canonical_names_fold_case_width_and_space() {
        assert_eq!(canonical_name("Marie Curie"), canonical_name("marie  curie"));
        assert_eq!(canonical_name("ＭＡＲＩＥ\tCurie "), "marie curie");
        assert_ne!(canonical_name("Marie Curie"), canonical_name("Pierre Curie"));
    }

    #[test]
    fn bloom_ordinals() {
        let ords: Vec<u8> = BloomLevel::ALL.iter().map(|l| l.ordinal()).collect();
        assert_eq!(ords, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!("creating".parse::<BloomLevel>(), Ok(BloomLevel::Creating));
    }

    #[test]
    fn language_tags_reduce_to_primary_subtag() {
        assert_eq!(primary_subtag("pt-BR"), "pt");
        assert_eq!(primary_subtag("ZH_hant"), "zh");
    }

    #[test]
    fn birth_date_display_round_trips() {
        for s in ["1867-11-07", "0800", "-0044", "1999-05"] {
            assert_eq!(s.parse::<BirthDate>().unwrap().to_string(), s);
        }
    }
}
