//! Multiple-choice benchmark generation through an LLM.
//!
//! One prompt per subject asks for a short biography followed by a JSON array
//! of twelve questions: every Bloom level in English and in the subject's
//! original language. Output is parsed strictly; nothing is repaired.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::{BloomLevel, LanguageVariant, PersonRecord};
use crate::http::{HttpError, JsonClient};
use crate::pool::bounded_map;
use crate::sampler::ManifestEntry;

pub const OPTION_COUNT: usize = 4;
pub const ITEMS_PER_SUBJECT: usize = BloomLevel::ALL.len() * LanguageVariant::ALL.len();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub max_tokens: u32,
}

impl Default for GenParams {
    fn default() -> Self {
        Self { max_tokens: 4096 }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error(transparent)]
    Transport(#[from] HttpError),
    #[error("model returned an unusable reply: {0}")]
    BadReply(String),
}

/// Text completion backend.
pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str, params: &GenParams) -> Result<String, LlmError>;
}

#[derive(Serialize)]
struct CompleteRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompleteResponse {
    text: String,
}

/// `POST {"prompt", "max_tokens"}` → `{"text"}`.
#[derive(Clone)]
pub struct HttpLlmClient {
    client: JsonClient,
}

impl HttpLlmClient {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self { client: JsonClient::new(endpoint, Duration::from_secs(300)) }
    }

    pub fn with_timeout(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self { client: JsonClient::new(endpoint, timeout) }
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, prompt: &str, params: &GenParams) -> Result<String, LlmError> {
        let resp: CompleteResponse =
            self.client.post(&CompleteRequest { prompt, max_tokens: params.max_tokens })?;
        Ok(resp.text)
    }
}

/// One multiple-choice question about one subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub subject: String,
    pub bloom: BloomLevel,
    pub variant: LanguageVariant,
    pub question: String,
    pub options: Vec<String>,
    pub answer_index: usize,
    pub uses_image: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
}

impl BenchmarkItem {
    /// `qid:level:variant`, unique within a benchmark.
    pub fn item_id(&self) -> String {
        format!("{}:{}:{}", self.subject, self.bloom.name().to_ascii_lowercase(), self.variant)
    }

    /// Checks the four-distinct-options, valid-key, non-empty-question rules.
    pub fn check(&self) -> Result<(), &'static str> {
        if self.question.trim().is_empty() {
            return Err("question");
        }
        if self.options.len() != OPTION_COUNT || self.options.iter().any(|o| o.trim().is_empty()) {
            return Err("options");
        }
        let distinct: BTreeSet<&str> = self.options.iter().map(|o| o.trim()).collect();
        if distinct.len() != OPTION_COUNT {
            return Err("options");
        }
        if self.answer_index >= OPTION_COUNT {
            return Err("answer_index");
        }
        if self.uses_image && self.image_url.is_none() {
            return Err("image_url");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("subject {0} has no original language")]
    MissingOriginalLanguage(String),
    #[error("subject {0} has an empty summary")]
    EmptySummary(String),
}

/// Generation prompt for one subject.
///
/// `summary` is the source text the biography and questions are drawn from.
pub fn build_generation_prompt(
    record: &PersonRecord,
    original_language: &str,
    summary: &str,
) -> Result<String, PromptError> {
    let lang = original_language.trim();
    if lang.is_empty() {
        return Err(PromptError::MissingOriginalLanguage(record.qid.clone()));
    }
    if summary.trim().is_empty() {
        return Err(PromptError::EmptySummary(record.qid.clone()));
    }
    let mut p = String::new();
    p.push_str("You write multiple-choice exam questions about one real person.\n\n");
    let _ = writeln!(p, "SUBJECT: {}", record.qid);
    let _ = writeln!(p, "ORIGINAL_LANGUAGE: {lang}");
    p.push_str("NAMES:\n");
    for (l, n) in &record.names {
        let _ = writeln!(p, "- {l}: {n}");
    }
    let _ = writeln!(p, "BIRTH_DATE: {}", record.birth_date);
    let _ = writeln!(p, "BIRTHPLACE: {}", record.birthplace);
    let _ = writeln!(p, "NATIONALITY: {}", record.nationality);
    p.push_str("SOURCE:\n");
    p.push_str(summary.trim());
    p.push_str("\n\n");
    p.push_str("Step 1. Write a concise biography of at most five sentences, using only the source.\n");
    let _ = writeln!(
        p,
        "Step 2. For every cognitive level below, write one question in English and the same question in language `{lang}`."
    );
    p.push_str("LEVELS:\n");
    for level in BloomLevel::ALL {
        let _ = writeln!(p, "{}. {}: {}", level.ordinal(), level.name(), level.description());
    }
    p.push('\n');
    let _ = writeln!(
        p,
        "After the biography, output exactly one JSON array of {ITEMS_PER_SUBJECT} objects and no other JSON."
    );
    p.push_str("Each object has the keys:\n");
    p.push_str("  \"bloom\": the level name as written above\n");
    p.push_str("  \"variant\": \"english\" or \"original\"\n");
    p.push_str("  \"question\": the question text\n");
    let _ = writeln!(p, "  \"options\": {OPTION_COUNT} distinct answer strings");
    let _ = writeln!(p, "  \"answer_index\": position of the correct option, 0 to {}", OPTION_COUNT - 1);
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no JSON array found in model output")]
    NoJsonFound,
    #[error("item {index}: invalid `{field}`")]
    SchemaViolation { index: usize, field: &'static str },
    #[error("missing items for {}", fmt_pairs(.missing))]
    MissingLevelVariant { missing: Vec<(BloomLevel, LanguageVariant)> },
    #[error("duplicate item for {level} / {variant}")]
    Duplicate { level: BloomLevel, variant: LanguageVariant },
}

fn fmt_pairs(pairs: &[(BloomLevel, LanguageVariant)]) -> String {
    pairs.iter().map(|(l, v)| format!("{l}/{v}")).collect::<Vec<_>>().join(", ")
}

/// Byte span of the first balanced top-level `[...]`, skipping brackets in strings.
pub fn first_json_array(text: &str) -> Option<&str> {
    let start = text.find('[')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '[' | '{' => depth += 1,
            ']' | '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_one(index: usize, v: &Value, subject: &str) -> Result<BenchmarkItem, ParseError> {
    let bad = |field| ParseError::SchemaViolation { index, field };
    let obj = v.as_object().ok_or(bad("item"))?;
    let bloom: BloomLevel = obj
        .get("bloom")
        .and_then(Value::as_str)
        .and_then(|s| s.parse().ok())
        .ok_or(bad("bloom"))?;
    let variant: LanguageVariant = obj
        .get("variant")
        .and_then(Value::as_str)
        .and_then(|s| s.parse().ok())
        .ok_or(bad("variant"))?;
    let question = obj.get("question").and_then(Value::as_str).ok_or(bad("question"))?;
    let options = obj
        .get("options")
        .and_then(Value::as_array)
        .ok_or(bad("options"))?
        .iter()
        .map(|o| o.as_str().map(str::to_string))
        .collect::<Option<Vec<_>>>()
        .ok_or(bad("options"))?;
    let answer_index = obj
        .get("answer_index")
        .and_then(Value::as_u64)
        .and_then(|n| usize::try_from(n).ok())
        .ok_or(bad("answer_index"))?;
    let item = BenchmarkItem {
        subject: subject.to_string(),
        bloom,
        variant,
        question: question.trim().to_string(),
        options: options.iter().map(|o| o.trim().to_string()).collect(),
        answer_index,
        uses_image: false,
        image_url: None,
    };
    item.check().map_err(bad)?;
    Ok(item)
}

/// Strictly parses the model's question array for `subject`.
///
/// Items come back sorted by (level, variant). All twelve (level, variant)
/// pairs must be present exactly once.
pub fn parse_items(text: &str, subject: &str) -> Result<Vec<BenchmarkItem>, ParseError> {
    let raw = first_json_array(text).ok_or(ParseError::NoJsonFound)?;
    let values: Vec<Value> = serde_json::from_str(raw).map_err(|_| ParseError::NoJsonFound)?;
    let mut by_key: BTreeMap<(BloomLevel, LanguageVariant), BenchmarkItem> = BTreeMap::new();
    for (i, v) in values.iter().enumerate() {
        let item = parse_one(i, v, subject)?;
        let key = (item.bloom, item.variant);
        if by_key.insert(key, item).is_some() {
            return Err(ParseError::Duplicate { level: key.0, variant: key.1 });
        }
    }
    let missing: Vec<_> = BloomLevel::ALL
        .into_iter()
        .flat_map(|l| LanguageVariant::ALL.into_iter().map(move |v| (l, v)))
        .filter(|k| !by_key.contains_key(k))
        .collect();
    if !missing.is_empty() {
        return Err(ParseError::MissingLevelVariant { missing });
    }
    Ok(by_key.into_values().collect())
}

#[derive(Serialize)]
struct WireItem<'a> {
    bloom: &'static str,
    variant: &'static str,
    question: &'a str,
    options: &'a [String],
    answer_index: usize,
}

/// The array form `parse_items` accepts, one line, fields in fixed order.
pub fn to_wire_json(items: &[BenchmarkItem]) -> String {
    let wire: Vec<WireItem<'_>> = items
        .iter()
        .map(|i| WireItem {
            bloom: i.bloom.name(),
            variant: i.variant.as_str(),
            question: &i.question,
            options: &i.options,
            answer_index: i.answer_index,
        })
        .collect();
    serde_json::to_string(&wire).expect("plain data serializes")
}

fn fnv(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

const STUB_CITIES: [&str; 5] = ["Lisbon", "Kyoto", "Lagos", "Quito", "Tromsø"];
const STUB_COUNTRIES: [&str; 5] = ["PT", "JP", "NG", "EC", "NO"];

/// Deterministic offline generator. Reads the subject fields back out of a
/// prompt from [`build_generation_prompt`] and writes twelve valid items.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubLlm;

struct PromptFields {
    qid: String,
    lang: String,
    names: BTreeMap<String, String>,
    year: i32,
    birthplace: String,
    nationality: String,
}

fn read_prompt(prompt: &str) -> Option<PromptFields> {
    let field = |key: &str| {
        prompt.lines().find_map(|l| l.strip_prefix(key)).map(|v| v.trim().to_string())
    };
    let mut names = BTreeMap::new();
    let mut in_names = false;
    for line in prompt.lines() {
        if line == "NAMES:" {
            in_names = true;
            continue;
        }
        if in_names {
            match line.strip_prefix("- ").and_then(|l| l.split_once(": ")) {
                Some((l, n)) => {
                    names.insert(l.to_string(), n.to_string());
                }
                None => break,
            }
        }
    }
    let date = field("BIRTH_DATE: ")?;
    let year_text = date.strip_prefix('-').map_or(date.as_str(), |d| d);
    let year: i32 = year_text.split('-').next()?.parse().ok()?;
    let year = if date.starts_with('-') { -year } else { year };
    Some(PromptFields {
        qid: field("SUBJECT: ")?,
        lang: field("ORIGINAL_LANGUAGE: ")?,
        names,
        year,
        birthplace: field("BIRTHPLACE: ")?,
        nationality: field("NATIONALITY: ")?,
    })
}

fn pick_distractors(correct: &str, pool: &[&str]) -> Vec<String> {
    pool.iter().filter(|c| **c != correct).take(OPTION_COUNT - 1).map(|s| s.to_string()).collect()
}

fn stub_item(f: &PromptFields, level: BloomLevel, variant: LanguageVariant) -> BenchmarkItem {
    let en_name = f.names.get("en").or_else(|| f.names.values().next()).cloned().unwrap_or_else(|| f.qid.clone());
    let name = match variant {
        LanguageVariant::English => en_name.clone(),
        LanguageVariant::Original => f.names.get(&f.lang).cloned().unwrap_or_else(|| en_name.clone()),
    };
    let century = |y: i32| format!("century {}", y.div_euclid(100) + 1);
    let (question, correct, distractors) = match level {
        BloomLevel::Remembering => (
            format!("In which year was {name} born?"),
            f.year.to_string(),
            [3, -5, 11].iter().map(|d| (f.year + d).to_string()).collect(),
        ),
        BloomLevel::Understanding => (
            format!("Where was {name} born?"),
            f.birthplace.clone(),
            pick_distractors(&f.birthplace, &STUB_CITIES),
        ),
        BloomLevel::Applying => (
            format!("Which country code matches the nationality of {name}?"),
            f.nationality.clone(),
            pick_distractors(&f.nationality, &STUB_COUNTRIES),
        ),
        BloomLevel::Analyzing => (
            format!("In which century did {name} live their early years?"),
            century(f.year),
            [-300, -100, 200].iter().map(|d| century(f.year + d)).collect(),
        ),
        BloomLevel::Evaluating => (
            format!("Which source best supports claims about {name}?"),
            "A documented biography".to_string(),
            vec!["An unsigned rumour".into(), "A novel".into(), "A horoscope".into()],
        ),
        BloomLevel::Creating => (
            format!("Which title best fits a factual profile of {name}?"),
            format!("{en_name} of {}", f.birthplace),
            vec![format!("{en_name} on Mars"), format!("{en_name} the Dragon"), format!("{en_name} and the Time Machine")],
        ),
    };
    let question = match variant {
        LanguageVariant::English => question,
        LanguageVariant::Original => format!("[{}] {question}", f.lang),
    };
    let key = (fnv(&format!("{}:{}:{}", f.qid, level.ordinal(), variant)) % OPTION_COUNT as u64) as usize;
    let mut options = distractors;
    options.insert(key, correct);
    BenchmarkItem {
        subject: f.qid.clone(),
        bloom: level,
        variant,
        question,
        options,
        answer_index: key,
        uses_image: false,
        image_url: None,
    }
}

impl LlmClient for StubLlm {
    fn complete(&self, prompt: &str, _params: &GenParams) -> Result<String, LlmError> {
        let f = read_prompt(prompt).ok_or_else(|| LlmError::BadReply("stub cannot read prompt".into()))?;
        let items: Vec<BenchmarkItem> = BloomLevel::ALL
            .into_iter()
            .flat_map(|l| LanguageVariant::ALL.into_iter().map(move |v| (l, v)))
            .map(|(l, v)| stub_item(&f, l, v))
            .collect();
        let name = f.names.get("en").cloned().unwrap_or_else(|| f.qid.clone());
        Ok(format!(
            "BIOGRAPHY: {name} was born in {} in {}.\n{}\n",
            f.year,
            f.birthplace,
            to_wire_json(&items)
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Levels whose items reference the subject's image, when one exists.
    pub image_levels: BTreeSet<BloomLevel>,
    pub max_in_flight: usize,
    /// Extra attempts after a reply fails to parse.
    pub retries: usize,
    pub params: GenParams,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            image_levels: BTreeSet::from([BloomLevel::Remembering, BloomLevel::Understanding]),
            max_in_flight: 4,
            retries: 1,
            params: GenParams::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("subject {0} is not in the database")]
    UnknownSubject(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("subject {qid}: {source}")]
    Llm { qid: String, source: LlmError },
    #[error("subject {qid}: {source}")]
    Parse { qid: String, source: ParseError },
}

/// Per-subject outcome of a generation run.
#[derive(Debug, Default)]
pub struct GenOutput {
    pub items: Vec<BenchmarkItem>,
    pub failures: Vec<GenError>,
}

fn generate_subject(
    entry: &ManifestEntry,
    record: &PersonRecord,
    llm: &dyn LlmClient,
    cfg: &GenConfig,
) -> Result<Vec<BenchmarkItem>, GenError> {
    let prompt = build_generation_prompt(record, &entry.original_language, &record.biography)?;
    let mut last = None;
    for _ in 0..=cfg.retries {
        let text = llm
            .complete(&prompt, &cfg.params)
            .map_err(|source| GenError::Llm { qid: record.qid.clone(), source })?;
        match parse_items(&text, &record.qid) {
            Ok(mut items) => {
                let image = record.image_urls.first();
                for item in &mut items {
                    if let Some(url) = image.filter(|_| cfg.image_levels.contains(&item.bloom)) {
                        item.uses_image = true;
                        item.image_url = Some(url.clone());
                    }
                }
                return Ok(items);
            }
            Err(e) => last = Some(e),
        }
    }
    Err(GenError::Parse { qid: record.qid.clone(), source: last.expect("at least one attempt") })
}

/// Generates items for every manifest subject.
///
/// Transport failures abort the run; subjects whose replies fail validation
/// are reported in `failures`. Items are ordered by (country, qid, level,
/// variant) whatever order the calls complete in.
pub fn generate_benchmark(
    manifest: &[ManifestEntry],
    records: &BTreeMap<String, PersonRecord>,
    llm: &dyn LlmClient,
    cfg: &GenConfig,
) -> Result<GenOutput, GenError> {
    let mut subjects: Vec<&ManifestEntry> = manifest.iter().collect();
    subjects.sort_by(|a, b| (&a.country, &a.qid).cmp(&(&b.country, &b.qid)));
    subjects.dedup_by(|a, b| a.qid == b.qid);
    let results = bounded_map(&subjects, cfg.max_in_flight, |entry| {
        let record = records.get(&entry.qid).ok_or_else(|| GenError::UnknownSubject(entry.qid.clone()))?;
        generate_subject(entry, record, llm, cfg)
    });
    let mut out = GenOutput::default();
    for r in results {
        match r {
            Ok(items) => out.items.extend(items),
            Err(e @ (GenError::Llm { .. } | GenError::UnknownSubject(_))) => return Err(e),
            Err(e) => out.failures.push(e),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BirthDate, PopularityTier};
    use crate::http::testing::serve;

    fn record() -> PersonRecord {
        PersonRecord {
            qid: "Q7186".into(),
            names: BTreeMap::from([
                ("en".to_string(), "Marie Curie".to_string()),
                ("fr".to_string(), "Marie Curie".to_string()),
                ("pl".to_string(), "Maria Skłodowska-Curie".to_string()),
            ]),
            biography: "Physicist and chemist who researched radioactivity.".into(),
            birth_date: BirthDate { year: 1867, month: Some(11), day: Some(7) },
            birthplace: "Warsaw".into(),
            nationality: "PL".into(),
            popularity: 100,
            image_urls: vec!["http://img/curie.jpg".into()],
        }
    }

    fn stub_reply() -> String {
        let p = build_generation_prompt(&record(), "pl", "Physicist").unwrap();
        StubLlm.complete(&p, &GenParams::default()).unwrap()
    }

    #[test]
    fn prompt_names_each_level_once() {
        let p = build_generation_prompt(&record(), "pl", "Physicist and chemist.").unwrap();
        for level in BloomLevel::ALL {
            assert_eq!(p.matches(level.name()).count(), 1, "{level}");
        }
    }

    #[test]
    fn prompt_lists_every_name_form() {
        let p = build_generation_prompt(&record(), "pl", "x").unwrap();
        assert!(p.contains("- en: Marie Curie"));
        assert!(p.contains("- fr: Marie Curie"));
        assert!(p.contains("- pl: Maria Skłodowska-Curie"));
    }

    #[test]
    fn prompt_preconditions() {
        assert_eq!(
            build_generation_prompt(&record(), "pl", "  "),
            Err(PromptError::EmptySummary("Q7186".into()))
        );
        assert_eq!(
            build_generation_prompt(&record(), "", "x"),
            Err(PromptError::MissingOriginalLanguage("Q7186".into()))
        );
    }

    #[test]
    fn stub_reply_parses_to_twelve() {
        let items = parse_items(&stub_reply(), "Q7186").unwrap();
        assert_eq!(items.len(), 12);
        assert!(items.iter().all(|i| i.check().is_ok()));
        let pl = items.iter().find(|i| i.variant == LanguageVariant::Original).unwrap();
        assert!(pl.question.contains("Skłodowska"));
    }

    #[test]
    fn three_options_is_a_schema_violation() {
        let mut items = parse_items(&stub_reply(), "Q7186").unwrap();
        items[4].options.pop();
        items[4].answer_index = 0;
        assert_eq!(
            parse_items(&to_wire_json(&items), "Q7186"),
            Err(ParseError::SchemaViolation { index: 4, field: "options" })
        );
    }

    #[test]
    fn duplicate_options_rejected() {
        let mut items = parse_items(&stub_reply(), "Q7186").unwrap();
        items[0].options[1] = items[0].options[0].clone();
        assert!(matches!(
            parse_items(&to_wire_json(&items), "Q7186"),
            Err(ParseError::SchemaViolation { index: 0, field: "options" })
        ));
    }

    #[test]
    fn missing_pair_reported() {
        let items = parse_items(&stub_reply(), "Q7186").unwrap();
        let kept: Vec<BenchmarkItem> = items
            .into_iter()
            .filter(|i| !(i.bloom == BloomLevel::Creating && i.variant == LanguageVariant::Original))
            .collect();
        assert_eq!(kept.len(), 11);
        assert_eq!(
            parse_items(&to_wire_json(&kept), "Q7186"),
            Err(ParseError::MissingLevelVariant { missing: vec![(BloomLevel::Creating, LanguageVariant::Original)] })
        );
    }

    #[test]
    fn duplicate_pair_reported() {
        let mut items = parse_items(&stub_reply(), "Q7186").unwrap();
        items.push(items[0].clone());
        assert!(matches!(parse_items(&to_wire_json(&items), "Q7186"), Err(ParseError::Duplicate { .. })));
    }

    #[test]
    fn no_array() {
        assert_eq!(parse_items("I cannot help with that.", "Q1"), Err(ParseError::NoJsonFound));
        assert_eq!(parse_items("[1, 2", "Q1"), Err(ParseError::NoJsonFound));
    }

    #[test]
    fn brackets_inside_strings_are_skipped() {
        assert_eq!(first_json_array(r#"pre ["a]", ["b"]] post [3]"#), Some(r#"["a]", ["b"]]"#));
        assert_eq!(first_json_array(r#"["x\"]"] tail"#), Some(r#"["x\"]"]"#));
    }

    #[test]
    fn item_id_format() {
        let items = parse_items(&stub_reply(), "Q7186").unwrap();
        assert_eq!(items[0].item_id(), "Q7186:remembering:english");
    }

    fn entry() -> ManifestEntry {
        ManifestEntry {
            qid: "Q7186".into(),
            country: "PL".into(),
            tier: PopularityTier::High,
            cluster: 0,
            original_language: "pl".into(),
        }
    }

    #[test]
    fn images_only_on_configured_levels() {
        let records = BTreeMap::from([("Q7186".to_string(), record())]);
        let out = generate_benchmark(&[entry()], &records, &StubLlm, &GenConfig::default()).unwrap();
        assert_eq!(out.items.len(), 12);
        for i in &out.items {
            let expect = matches!(i.bloom, BloomLevel::Remembering | BloomLevel::Understanding);
            assert_eq!(i.uses_image, expect);
            assert_eq!(i.image_url.is_some(), expect);
        }
        let mut r = record();
        r.image_urls.clear();
        let records = BTreeMap::from([("Q7186".to_string(), r)]);
        let out = generate_benchmark(&[entry()], &records, &StubLlm, &GenConfig::default()).unwrap();
        assert!(out.items.iter().all(|i| !i.uses_image));
    }

    struct Garbage;
    impl LlmClient for Garbage {
        fn complete(&self, _: &str, _: &GenParams) -> Result<String, LlmError> {
            Ok("no idea".into())
        }
    }

    #[test]
    fn unparsable_subject_is_reported_not_fatal() {
        let records = BTreeMap::from([("Q7186".to_string(), record())]);
        let out = generate_benchmark(&[entry()], &records, &Garbage, &GenConfig::default()).unwrap();
        assert!(out.items.is_empty());
        assert!(matches!(out.failures[0], GenError::Parse { .. }));
    }

    #[test]
    fn unknown_subject_is_fatal() {
        let out = generate_benchmark(&[entry()], &BTreeMap::new(), &StubLlm, &GenConfig::default());
        assert!(matches!(out, Err(GenError::UnknownSubject(_))));
    }

    #[test]
    fn http_client_wire_format() {
        let (url, seen) = serve(|_| (200, r#"{"text":"hello"}"#.to_string()));
        let c = HttpLlmClient::new(url);
        assert_eq!(c.complete("hi", &GenParams { max_tokens: 7 }).unwrap(), "hello");
        let body: Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
        assert_eq!(body, serde_json::json!({"prompt": "hi", "max_tokens": 7}));
    }

    #[test]
    fn http_client_status_error() {
        let (url, _) = serve(|_| (500, "{}".to_string()));
        let c = HttpLlmClient::new(url);
        assert!(matches!(c.complete("hi", &GenParams::default()), Err(LlmError::Transport(HttpError::BadResponse { .. }))));
    }
}
