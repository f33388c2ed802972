//! Relational tables → deduplicated person records.
//!
//! Stages: detect person columns (header patterns or PERSON-dominated cells),
//! extract one raw mention per non-empty person cell, group mentions by
//! canonical name, align groups to Q-IDs, consolidate each Q-ID group by modal
//! values, attach translated names and page views, validate, and report
//! per-country coverage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    canonical_name, collapse_whitespace, normalize_nationality, primary_subtag, validate_record, BirthDate,
    PersonRecord, RawPerson, RecordRejection, MAX_IMAGES,
};
use crate::io::{read_jsonl, read_tsv_map, to_jsonl, write_atomic, IoError};

pub const DEFAULT_PATTERNS: &[&str] = &[
    "surname",
    "forename",
    "first_name",
    "last_name",
    "full_name",
    "person",
    "author",
    "player",
    "actor",
    "director",
];
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_SAMPLE_SIZE: usize = 100;
pub const MIN_PER_COUNTRY: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub header: String,
    pub cells: Vec<String>,
    #[serde(default)]
    pub fk: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceTable {
    pub name: String,
    pub columns: Vec<Column>,
}

impl SourceTable {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.cells.len())
    }

    pub fn check_rectangular(&self) -> Result<(), IngestError> {
        let n = self.rows();
        match self.columns.iter().find(|c| c.cells.len() != n) {
            Some(c) => Err(IngestError::Ragged { table: self.name.clone(), column: c.header.clone() }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("table `{0}` has no rows or no columns")]
    EmptyTable(String),
    #[error("table `{table}`: column `{column}` has a different length")]
    Ragged { table: String, column: String },
    #[error("threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("person pattern list is empty")]
    NoPatterns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EntityLabel {
    Person,
    Other,
}

/// Named-entity tagger restricted to PERSON vs everything else.
pub trait NerTagger: Sync {
    fn tag(&self, text: &str) -> EntityLabel;
}

impl<F: Fn(&str) -> EntityLabel + Sync> NerTagger for F {
    fn tag(&self, text: &str) -> EntityLabel {
        self(text)
    }
}

/// Capitalization heuristic: 2–5 alphabetic tokens, at least two capitalized,
/// the rest lowercase name particles, no organisation words.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicTagger;

const PARTICLES: &[&str] = &[
    "von", "van", "de", "da", "di", "du", "del", "della", "der", "den", "la", "le", "bin", "ibn", "al", "y", "e", "af",
];
const ORG_WORDS: &[&str] = &[
    "inc", "ltd", "llc", "corp", "corporation", "company", "university", "college", "club", "fc", "city", "republic",
    "kingdom", "street", "river", "museum", "school", "party", "church", "bank", "group", "records", "studios",
];

impl NerTagger for HeuristicTagger {
    fn tag(&self, text: &str) -> EntityLabel {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if !(2..=5).contains(&tokens.len()) {
            return EntityLabel::Other;
        }
        let mut capitalized = 0;
        for t in &tokens {
            let bare = t.trim_matches(|c: char| c == ',' || c == '.');
            if bare.is_empty() || bare.chars().any(|c| c.is_ascii_digit()) {
                return EntityLabel::Other;
            }
            if ORG_WORDS.contains(&bare.to_lowercase().as_str()) {
                return EntityLabel::Other;
            }
            if !bare.chars().all(|c| c.is_alphabetic() || matches!(c, '-' | '\'' | '.' | '’')) {
                return EntityLabel::Other;
            }
            let first = bare.chars().next().unwrap();
            if first.is_uppercase() {
                capitalized += 1;
            } else if !PARTICLES.contains(&bare) {
                return EntityLabel::Other;
            }
        }
        if capitalized >= 2 {
            EntityLabel::Person
        } else {
            EntityLabel::Other
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub patterns: Vec<String>,
    /// A column qualifies when its PERSON fraction is strictly above this.
    pub threshold: f64,
    /// Cells inspected per column (the first N rows).
    pub sample_size: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            patterns: DEFAULT_PATTERNS.iter().map(|s| s.to_string()).collect(),
            threshold: DEFAULT_THRESHOLD,
            sample_size: DEFAULT_SAMPLE_SIZE,
        }
    }
}

/// PERSON share among the first `sample_size` cells. Empty cells count as not PERSON.
fn person_fraction(cells: &[String], tagger: &dyn NerTagger, sample_size: usize) -> f64 {
    let sample = &cells[..cells.len().min(sample_size)];
    if sample.is_empty() {
        return 0.0;
    }
    let hits = sample
        .iter()
        .filter(|c| !c.trim().is_empty() && tagger.tag(c.trim()) == EntityLabel::Person)
        .count();
    hits as f64 / sample.len() as f64
}

/// Column indices whose header contains a person pattern (and does not name a
/// person attribute), or whose sampled cells are PERSON-tagged above `threshold`.
pub fn detect_person_columns(
    table: &SourceTable,
    cfg: &DetectConfig,
    tagger: &dyn NerTagger,
) -> Result<BTreeSet<usize>, IngestError> {
    if !(cfg.threshold > 0.0 && cfg.threshold <= 1.0) {
        return Err(IngestError::InvalidThreshold(cfg.threshold));
    }
    let patterns: Vec<String> = cfg.patterns.iter().map(|p| p.trim().to_lowercase()).filter(|p| !p.is_empty()).collect();
    if patterns.is_empty() {
        return Err(IngestError::NoPatterns);
    }
    if table.columns.is_empty() || table.rows() == 0 {
        return Err(IngestError::EmptyTable(table.name.clone()));
    }
    table.check_rectangular()?;
    Ok(table
        .columns
        .iter()
        .enumerate()
        .filter(|(_, col)| {
            let header = col.header.to_lowercase();
            // `author_birth_date` names an attribute of an author, not a person
            let by_header =
                classify_attr(&header_key(&col.header)).is_none() && patterns.iter().any(|p| header.contains(p.as_str()));
            by_header
                || person_fraction(&col.cells, tagger, cfg.sample_size) > cfg.threshold
        })
        .map(|(i, _)| i)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub table: String,
    pub row: usize,
    pub column: usize,
}

/// One person mention extracted from a table cell, plus the attribute cells
/// associated with it in the same row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RawRecord {
    pub provenance: Provenance,
    pub name: String,
    pub biography: Option<String>,
    pub birth_date: Option<String>,
    pub birthplace: Option<String>,
    pub nationality: Option<String>,
    pub image_url: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Attr {
    Biography,
    BirthDate,
    Birthplace,
    Nationality,
    Image,
}

fn header_key(h: &str) -> String {
    h.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .collect::<String>()
        .split('_')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}

fn classify_attr(key: &str) -> Option<Attr> {
    let has = |s: &str| key.contains(s);
    if has("birthplace") || has("birth_place") || has("place_of_birth") || has("born_in") || has("hometown") {
        Some(Attr::Birthplace)
    } else if has("birth_date") || has("birthdate") || has("date_of_birth") || has("dob") || has("birth_year") || has("born")
    {
        Some(Attr::BirthDate)
    } else if has("nationality") || has("citizenship") || has("country") {
        Some(Attr::Nationality)
    } else if has("biography") || has("bio") || has("description") || has("summary") {
        Some(Attr::Biography)
    } else if has("image") || has("photo") || has("picture") {
        Some(Attr::Image)
    } else {
        None
    }
}

/// Attribute columns owned by each person column. An attribute column whose
/// header starts with a person column's header (`director_birth_date`) belongs
/// to that column; unprefixed attribute columns belong to the sole person
/// column when there is exactly one.
fn attribute_owners(table: &SourceTable, person_columns: &BTreeSet<usize>) -> BTreeMap<usize, Vec<(usize, Attr)>> {
    let mut owners: BTreeMap<usize, Vec<(usize, Attr)>> = person_columns.iter().map(|&p| (p, Vec::new())).collect();
    let person_keys: Vec<(usize, String)> =
        person_columns.iter().map(|&p| (p, header_key(&table.columns[p].header))).collect();
    for (i, col) in table.columns.iter().enumerate() {
        if person_columns.contains(&i) {
            continue;
        }
        let key = header_key(&col.header);
        let Some(attr) = classify_attr(&key) else { continue };
        let owner = person_keys
            .iter()
            .filter(|(_, pk)| !pk.is_empty() && key.starts_with(&format!("{pk}_")))
            .max_by_key(|(_, pk)| pk.len())
            .map(|(p, _)| *p)
            .or_else(|| (person_keys.len() == 1).then(|| person_keys[0].0));
        if let Some(p) = owner {
            owners.entry(p).or_default().push((i, attr));
        }
    }
    owners
}

/// One raw record per (row, person column) with a non-empty cell.
pub fn extract_raw_records(table: &SourceTable, person_columns: &BTreeSet<usize>) -> Vec<RawRecord> {
    let person_columns: BTreeSet<usize> =
        person_columns.iter().copied().filter(|&c| c < table.columns.len()).collect();
    let owners = attribute_owners(table, &person_columns);
    let mut out = Vec::new();
    for row in 0..table.rows() {
        for &pc in &person_columns {
            let Some(cell) = table.columns[pc].cells.get(row) else { continue };
            let name = collapse_whitespace(cell);
            if name.is_empty() {
                continue;
            }
            let mut rec = RawRecord {
                provenance: Provenance { table: table.name.clone(), row, column: pc },
                name,
                biography: None,
                birth_date: None,
                birthplace: None,
                nationality: None,
                image_url: None,
            };
            for &(ac, attr) in &owners[&pc] {
                let v = table.columns[ac].cells.get(row).map(|s| s.trim()).unwrap_or("");
                if v.is_empty() {
                    continue;
                }
                let slot = match attr {
                    Attr::Biography => &mut rec.biography,
                    Attr::BirthDate => &mut rec.birth_date,
                    Attr::Birthplace => &mut rec.birthplace,
                    Attr::Nationality => &mut rec.nationality,
                    Attr::Image => &mut rec.image_url,
                };
                slot.get_or_insert_with(|| v.to_string());
            }
            out.push(rec);
        }
    }
    out
}

/// Groups mentions by canonical name. Members are kept in provenance order.
pub fn merge_by_name(records: Vec<RawRecord>) -> BTreeMap<String, Vec<RawRecord>> {
    let mut groups: BTreeMap<String, Vec<RawRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(canonical_name(&r.name)).or_default().push(r);
    }
    for g in groups.values_mut() {
        g.sort();
    }
    groups
}

/// Mentions that share one Q-ID.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuplicateGroup {
    pub qid: String,
    pub members: Vec<RawRecord>,
}

/// Most frequent value; ties go to the smallest value in `Ord`.
pub fn modal<T: Ord + Clone>(values: impl IntoIterator<Item = T>) -> Option<T> {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_insert(0) += 1;
    }
    let mut best: Option<(&T, usize)> = None;
    for (v, &n) in &counts {
        // strictly greater keeps the first (smallest) value on ties
        if best.is_none_or(|(_, bn)| n > bn) {
            best = Some((v, n));
        }
    }
    best.map(|(v, _)| v.clone())
}

/// Parsed dates sort before unparsable text; among parsed dates, earliest first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum DateCandidate {
    Valid(BirthDate),
    Malformed(String),
}

fn nationality_key(s: &str) -> String {
    normalize_nationality(s).map(str::to_string).unwrap_or_else(|| collapse_whitespace(s))
}

fn texts<'a, I: Iterator<Item = &'a Option<String>>>(it: I) -> impl Iterator<Item = String> + use<'a, I> {
    it.filter_map(|v| v.as_deref().map(collapse_whitespace)).filter(|s| !s.is_empty())
}

/// Merges a duplicate group into one draft record by modal field values.
///
/// The draft has no popularity yet; page views are attached afterwards.
pub fn consolidate(group: &DuplicateGroup) -> Result<RawPerson, RecordRejection> {
    let display = modal(group.members.iter().map(|m| collapse_whitespace(&m.name))).unwrap_or_default();
    let qid = group.qid.trim();
    if qid.is_empty() {
        return Err(RecordRejection::NoQid(display));
    }
    let biography = modal(texts(group.members.iter().map(|m| &m.biography)));
    let birthplace = modal(texts(group.members.iter().map(|m| &m.birthplace)));
    let nationality = modal(texts(group.members.iter().map(|m| &m.nationality)).map(|s| nationality_key(&s)));
    let birth_date = modal(texts(group.members.iter().map(|m| &m.birth_date)).map(|s| match s.parse::<BirthDate>() {
        Ok(d) => DateCandidate::Valid(d),
        Err(_) => DateCandidate::Malformed(s),
    }))
    .map(|d| match d {
        DateCandidate::Valid(d) => d.to_string(),
        DateCandidate::Malformed(s) => s,
    });

    let mut url_counts: BTreeMap<String, usize> = BTreeMap::new();
    for u in texts(group.members.iter().map(|m| &m.image_url)) {
        *url_counts.entry(u).or_insert(0) += 1;
    }
    let mut urls: Vec<(String, usize)> = url_counts.into_iter().collect();
    urls.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let image_urls = urls.into_iter().take(MAX_IMAGES).map(|(u, _)| u).collect();

    let mut names = BTreeMap::new();
    if !display.is_empty() {
        names.insert("en".to_string(), display);
    }
    Ok(RawPerson {
        qid: qid.to_string(),
        names,
        biography,
        birth_date,
        birthplace,
        nationality,
        popularity: None,
        image_urls,
    })
}

/// Left-biased union: existing languages are never overwritten.
pub fn merge_names(names: &mut BTreeMap<String, String>, translations: &BTreeMap<String, String>) {
    for (lang, name) in translations {
        let lang = primary_subtag(lang);
        let name = collapse_whitespace(name);
        if lang.is_empty() || name.is_empty() {
            continue;
        }
        names.entry(lang).or_insert(name);
    }
}

/// Adds translated names to a record without touching existing entries.
pub fn attach_names(mut record: PersonRecord, translations: &BTreeMap<String, String>) -> PersonRecord {
    merge_names(&mut record.names, translations);
    record
}

/// Sets annual page views; zero views rejects the record.
pub fn enrich_popularity(mut record: RawPerson, views: u64) -> Result<RawPerson, RecordRejection> {
    if views == 0 {
        return Err(RecordRejection::ZeroPopularity);
    }
    record.popularity = Some(views);
    Ok(record)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub min_per_country: usize,
    pub counts: BTreeMap<String, usize>,
    pub flagged: BTreeSet<String>,
}

impl CoverageReport {
    /// Countries that meet the minimum and may be sampled.
    pub fn is_eligible(&self, country: &str) -> bool {
        self.counts.contains_key(country) && !self.flagged.contains(country)
    }

    pub fn warnings(&self) -> Vec<String> {
        self.flagged
            .iter()
            .map(|c| format!("country {c} has {} records, below the minimum of {}", self.counts[c], self.min_per_country))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("country,count,flagged\n");
        for (c, n) in &self.counts {
            let _ = writeln!(out, "{c},{n},{}", self.flagged.contains(c));
        }
        out
    }
}

/// Per-country counts; countries below `min_per_country` are flagged, never dropped.
pub fn coverage_report(records: &[PersonRecord], min_per_country: usize) -> CoverageReport {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(r.nationality.clone()).or_insert(0) += 1;
    }
    let flagged = counts.iter().filter(|(_, &n)| n < min_per_country).map(|(c, _)| c.clone()).collect();
    CoverageReport { min_per_country, counts, flagged }
}

/// Translation file line: `{"qid": "...", "names": {"fr": "...", ...}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Translation {
    pub qid: String,
    pub names: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionEntry {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qid: Option<String>,
    pub name: String,
    pub reason: RecordRejection,
}

#[derive(Debug, Clone, Default)]
pub struct IngestInputs {
    pub tables: Vec<SourceTable>,
    /// Name (any form; canonicalized on use) → Q-ID.
    pub qid_map: BTreeMap<String, String>,
    pub translations: BTreeMap<String, BTreeMap<String, String>>,
    pub pageviews: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub detect: DetectConfig,
    pub min_per_country: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { detect: DetectConfig::default(), min_per_country: MIN_PER_COUNTRY }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub tables: usize,
    pub mentions: usize,
    pub name_groups: usize,
    pub qid_groups: usize,
    pub unmapped_groups: usize,
}

#[derive(Debug, Clone, Default)]
pub struct IngestOutput {
    /// Accepted records in qid order.
    pub records: Vec<PersonRecord>,
    pub rejections: Vec<RejectionEntry>,
    pub coverage: CoverageReport,
    /// Non-fatal diagnostics (post-merge NER failures, skipped tables, coverage).
    pub warnings: Vec<String>,
    pub stats: IngestStats,
}

impl IngestOutput {
    pub fn records_jsonl(&self) -> String {
        crate::io::to_jsonl(&self.records)
    }

    pub fn rejections_jsonl(&self) -> String {
        crate::io::to_jsonl(&self.rejections)
    }
}

/// Runs the full table → record pipeline. Output is independent of table order.
pub fn run_pipeline(inputs: &IngestInputs, cfg: &IngestConfig, tagger: &dyn NerTagger) -> Result<IngestOutput, IngestError> {
    if !(cfg.detect.threshold > 0.0 && cfg.detect.threshold <= 1.0) {
        return Err(IngestError::InvalidThreshold(cfg.detect.threshold));
    }
    let per_table: Vec<Result<Vec<RawRecord>, IngestError>> = inputs
        .tables
        .par_iter()
        .map(|t| detect_person_columns(t, &cfg.detect, tagger).map(|cols| extract_raw_records(t, &cols)))
        .collect();

    let mut warnings = Vec::new();
    let mut mentions = Vec::new();
    for (t, res) in inputs.tables.iter().zip(per_table) {
        match res {
            Ok(m) => mentions.extend(m),
            Err(e @ (IngestError::EmptyTable(_) | IngestError::Ragged { .. })) => {
                warnings.push(format!("skipped table `{}`: {e}", t.name));
            }
            Err(e) => return Err(e),
        }
    }
    let mention_count = mentions.len();
    let name_groups = merge_by_name(mentions);

    let qid_map: BTreeMap<String, &String> = inputs.qid_map.iter().map(|(k, v)| (canonical_name(k), v)).collect();
    let mut by_qid: BTreeMap<String, Vec<RawRecord>> = BTreeMap::new();
    let mut rejections = Vec::new();
    let mut unmapped = 0;
    for (key, members) in &name_groups {
        match qid_map.get(key) {
            Some(qid) => by_qid.entry((*qid).clone()).or_default().extend(members.iter().cloned()),
            None => {
                unmapped += 1;
                let display = modal(members.iter().map(|m| m.name.clone())).unwrap_or_default();
                rejections.push(RejectionEntry { qid: None, name: display.clone(), reason: RecordRejection::NoQid(display) });
            }
        }
    }

    let mut records = Vec::new();
    for (qid, mut members) in by_qid.clone() {
        members.sort();
        let group = DuplicateGroup { qid: qid.clone(), members };
        let display = modal(group.members.iter().map(|m| collapse_whitespace(&m.name))).unwrap_or_default();
        let reject = |reason| RejectionEntry { qid: Some(qid.clone()), name: display.clone(), reason };
        let draft = match consolidate(&group) {
            Ok(d) => d,
            Err(r) => {
                rejections.push(reject(r));
                continue;
            }
        };
        let mut draft = draft;
        if let Some(tr) = inputs.translations.get(&qid) {
            merge_names(&mut draft.names, tr);
        }
        let views = inputs.pageviews.get(&qid).copied().unwrap_or(0);
        let draft = match enrich_popularity(draft, views) {
            Ok(d) => d,
            Err(r) => {
                rejections.push(reject(r));
                continue;
            }
        };
        match validate_record(&draft) {
            Ok(rec) => {
                if tagger.tag(&display) != EntityLabel::Person {
                    warnings.push(format!("{qid}: merged name `{display}` not tagged PERSON"));
                }
                records.push(rec);
            }
            Err(r) => rejections.push(reject(r)),
        }
    }

    let coverage = coverage_report(&records, cfg.min_per_country);
    warnings.extend(coverage.warnings());
    Ok(IngestOutput {
        records,
        rejections,
        coverage,
        warnings,
        stats: IngestStats {
            tables: inputs.tables.len(),
            mentions: mention_count,
            name_groups: name_groups.len(),
            qid_groups: by_qid.len(),
            unmapped_groups: unmapped,
        },
    })
}

/// Reads one table from CSV; the first row is the header, the file stem the name.
pub fn read_csv_table(path: &Path) -> Result<SourceTable, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| IoError::parse(path, 0, e.to_string()))?;
    let headers = reader.headers().map_err(|e| IoError::parse(path, 1, e.to_string()))?.clone();
    let mut columns: Vec<Column> =
        headers.iter().map(|h| Column { header: h.trim().to_string(), cells: Vec::new(), fk: false }).collect();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| IoError::parse(path, i + 2, e.to_string()))?;
        // short rows leave their columns short, which the pipeline reports as ragged
        for (col, cell) in columns.iter_mut().zip(row.iter()) {
            col.cells.push(cell.to_string());
        }
    }
    let name = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    Ok(SourceTable { name, columns })
}

pub fn table_to_csv(table: &SourceTable) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(table.columns.iter().map(|c| c.header.as_str()));
    for row in 0..table.rows() {
        let _ = w.write_record(table.columns.iter().map(|c| c.cells.get(row).map_or("", String::as_str)));
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}

/// Tables from JSONL (one [`SourceTable`] per line) or from a single CSV file.
pub fn read_tables(path: &Path) -> Result<Vec<SourceTable>, IoError> {
    if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")) {
        return Ok(vec![read_csv_table(path)?]);
    }
    read_jsonl(path)
}

/// `qid<TAB>views` lines.
pub fn read_pageviews(path: &Path) -> Result<BTreeMap<String, u64>, IoError> {
    read_tsv_map(path)?
        .into_iter()
        .map(|(qid, views)| match views.parse() {
            Ok(n) => Ok((qid, n)),
            Err(_) => Err(IoError::parse(path, 0, format!("bad view count for {qid}: `{views}`"))),
        })
        .collect()
}

pub fn read_translations(path: &Path) -> Result<BTreeMap<String, BTreeMap<String, String>>, IoError> {
    Ok(read_jsonl::<Translation>(path)?.into_iter().map(|t| (t.qid, t.names)).collect())
}

/// File names used by [`write_inputs`].
pub const TABLES_FILE: &str = "tables.jsonl";
pub const QID_MAP_FILE: &str = "qids.tsv";
pub const TRANSLATIONS_FILE: &str = "translations.jsonl";
pub const PAGEVIEWS_FILE: &str = "pageviews.tsv";

/// Writes `inputs` as four files in `dir`.
pub fn write_inputs(inputs: &IngestInputs, dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    write_atomic(&dir.join(TABLES_FILE), to_jsonl(&inputs.tables).as_bytes())?;
    let qids: String = inputs.qid_map.iter().map(|(k, v)| format!("{k}\t{v}\n")).collect();
    write_atomic(&dir.join(QID_MAP_FILE), qids.as_bytes())?;
    let views: String = inputs.pageviews.iter().map(|(k, v)| format!("{k}\t{v}\n")).collect();
    write_atomic(&dir.join(PAGEVIEWS_FILE), views.as_bytes())?;
    let translations: Vec<Translation> =
        inputs.translations.iter().map(|(q, n)| Translation { qid: q.clone(), names: n.clone() }).collect();
    write_atomic(&dir.join(TRANSLATIONS_FILE), to_jsonl(&translations).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(header: &str, cells: &[&str]) -> Column {
        Column { header: header.into(), cells: cells.iter().map(|s| s.to_string()).collect(), fk: false }
    }

    fn table(cols: Vec<Column>) -> SourceTable {
        SourceTable { name: "t".into(), columns: cols }
    }

    fn never(_: &str) -> EntityLabel {
        EntityLabel::Other
    }

    #[test]
    fn header_pattern_selects_column() {
        let t = table(vec![col("Surname", &["1", "2"]), col("revenue", &["10", "20"])]);
        let cols = detect_person_columns(&t, &DetectConfig::default(), &never).unwrap();
        assert_eq!(cols, BTreeSet::from([0]));
    }

    #[test]
    fn attribute_headers_do_not_match_patterns() {
        let t = table(vec![
            col("author", &["Ann Bell"]),
            col("author_birth_date", &["1900-01-01"]),
            col("author_nationality", &["France"]),
        ]);
        let cols = detect_person_columns(&t, &DetectConfig::default(), &never).unwrap();
        assert_eq!(cols, BTreeSet::from([0]));
    }

    #[test]
    fn ner_dominance_selects_column() {
        let cells: Vec<String> = (0..10).map(|i| if i < 8 { format!("P{i}") } else { format!("x{i}") }).collect();
        let refs: Vec<&str> = cells.iter().map(String::as_str).collect();
        let t = table(vec![col("winner", &refs)]);
        let tagger = |s: &str| if s.starts_with('P') { EntityLabel::Person } else { EntityLabel::Other };
        let cfg = DetectConfig { threshold: 0.5, ..DetectConfig::default() };
        assert_eq!(detect_person_columns(&t, &cfg, &tagger).unwrap(), BTreeSet::from([0]));
        // 0.8 is not strictly above 0.8
        let cfg = DetectConfig { threshold: 0.8, ..DetectConfig::default() };
        assert!(detect_person_columns(&t, &cfg, &tagger).unwrap().is_empty());
    }

    #[test]
    fn detect_errors() {
        let t = table(vec![]);
        assert!(matches!(detect_person_columns(&t, &DetectConfig::default(), &never), Err(IngestError::EmptyTable(_))));
        let t = table(vec![col("a", &["x"])]);
        let cfg = DetectConfig { threshold: 0.0, ..DetectConfig::default() };
        assert!(matches!(detect_person_columns(&t, &cfg, &never), Err(IngestError::InvalidThreshold(_))));
        let cfg = DetectConfig { patterns: vec![], ..DetectConfig::default() };
        assert_eq!(detect_person_columns(&t, &cfg, &never), Err(IngestError::NoPatterns));
        let t = table(vec![col("a", &["x"]), col("b", &["x", "y"])]);
        assert!(matches!(detect_person_columns(&t, &DetectConfig::default(), &never), Err(IngestError::Ragged { .. })));
    }

    #[test]
    fn heuristic_tagger() {
        let t = HeuristicTagger;
        assert_eq!(t.tag("Marie Curie"), EntityLabel::Person);
        assert_eq!(t.tag("Ludwig van Beethoven"), EntityLabel::Person);
        assert_eq!(t.tag("Maria Skłodowska-Curie"), EntityLabel::Person);
        assert_eq!(t.tag("Acme Corporation"), EntityLabel::Other);
        assert_eq!(t.tag("1867"), EntityLabel::Other);
        assert_eq!(t.tag("Madonna"), EntityLabel::Other);
    }

    #[test]
    fn extraction_skips_empty_cells() {
        let t = table(vec![col("author", &["Ann Lee", "", "Bo Chan"])]);
        let recs = extract_raw_records(&t, &BTreeSet::from([0]));
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].provenance, Provenance { table: "t".into(), row: 2, column: 0 });
        assert!(extract_raw_records(&t, &BTreeSet::new()).is_empty());
    }

    #[test]
    fn extraction_counts_rows_times_columns() {
        let t = table(vec![col("author", &["A B", "C D"]), col("director", &["E F", "G H"])]);
        assert_eq!(extract_raw_records(&t, &BTreeSet::from([0, 1])).len(), 4);
    }

    #[test]
    fn attributes_follow_prefix_or_sole_owner() {
        let t = table(vec![
            col("author", &["Ann Lee"]),
            col("director", &["Bo Chan"]),
            col("director_birth_date", &["1950"]),
            col("country", &["FR"]),
        ]);
        let recs = extract_raw_records(&t, &BTreeSet::from([0, 1]));
        let bo = recs.iter().find(|r| r.name == "Bo Chan").unwrap();
        assert_eq!(bo.birth_date.as_deref(), Some("1950"));
        // ambiguous unprefixed attribute is not attached to either person
        assert!(recs.iter().all(|r| r.nationality.is_none()));

        let t = table(vec![col("player", &["Ann Lee"]), col("nationality", &["FR"]), col("born", &["1950-01-02"])]);
        let r = &extract_raw_records(&t, &BTreeSet::from([0]))[0];
        assert_eq!(r.nationality.as_deref(), Some("FR"));
        assert_eq!(r.birth_date.as_deref(), Some("1950-01-02"));
    }

    fn mention(name: &str, row: usize) -> RawRecord {
        RawRecord {
            provenance: Provenance { table: "t".into(), row, column: 0 },
            name: name.into(),
            biography: None,
            birth_date: None,
            birthplace: None,
            nationality: None,
            image_url: None,
        }
    }

    #[test]
    fn merge_canonicalizes() {
        let g = merge_by_name(vec![mention("Marie Curie", 0), mention("marie  curie", 1)]);
        assert_eq!(g.len(), 1);
        assert_eq!(g["marie curie"].len(), 2);
        let g = merge_by_name(vec![mention("Marie Curie", 0), mention("Pierre Curie", 1)]);
        assert_eq!(g.len(), 2);
        assert!(merge_by_name(vec![]).is_empty());
    }

    fn with_nat(n: &str, row: usize) -> RawRecord {
        RawRecord { nationality: Some(n.into()), ..mention("X Y", row) }
    }

    #[test]
    fn modal_nationality() {
        let g = DuplicateGroup { qid: "Q1".into(), members: vec![with_nat("FR", 0), with_nat("FR", 1), with_nat("DE", 2)] };
        assert_eq!(consolidate(&g).unwrap().nationality.as_deref(), Some("FR"));
        let g = DuplicateGroup { qid: "Q1".into(), members: vec![with_nat("FR", 0), with_nat("DE", 1)] };
        assert_eq!(consolidate(&g).unwrap().nationality.as_deref(), Some("DE"));
        // names of the same country count together
        let g = DuplicateGroup {
            qid: "Q1".into(),
            members: vec![with_nat("France", 0), with_nat("FR", 1), with_nat("DE", 2)],
        };
        assert_eq!(consolidate(&g).unwrap().nationality.as_deref(), Some("FR"));
    }

    #[test]
    fn modal_dates_tie_to_earliest() {
        let d = |s: &str, row| RawRecord { birth_date: Some(s.into()), ..mention("X Y", row) };
        let g = DuplicateGroup { qid: "Q1".into(), members: vec![d("1900", 0), d("1850", 1), d("bad", 2)] };
        assert_eq!(consolidate(&g).unwrap().birth_date.as_deref(), Some("1850"));
    }

    #[test]
    fn singleton_group_keeps_values() {
        let m = RawRecord {
            biography: Some("A writer.".into()),
            birth_date: Some("1900-01-01".into()),
            birthplace: Some("Lyon".into()),
            nationality: Some("FR".into()),
            image_url: Some("http://img/1".into()),
            ..mention("Ann Lee", 0)
        };
        let c = consolidate(&DuplicateGroup { qid: "Q5".into(), members: vec![m] }).unwrap();
        assert_eq!(c.biography.as_deref(), Some("A writer."));
        assert_eq!(c.birthplace.as_deref(), Some("Lyon"));
        assert_eq!(c.names["en"], "Ann Lee");
        assert_eq!(c.image_urls, vec!["http://img/1".to_string()]);
    }

    #[test]
    fn consolidate_without_qid() {
        let g = DuplicateGroup { qid: " ".into(), members: vec![mention("Ann Lee", 0)] };
        assert_eq!(consolidate(&g), Err(RecordRejection::NoQid("Ann Lee".into())));
    }

    fn sample_record() -> PersonRecord {
        PersonRecord {
            qid: "Q7186".into(),
            names: BTreeMap::from([("en".to_string(), "Marie Curie".to_string())]),
            biography: "b".into(),
            birth_date: BirthDate::year(1867),
            birthplace: "Warsaw".into(),
            nationality: "PL".into(),
            popularity: 5,
            image_urls: vec![],
        }
    }

    #[test]
    fn attach_names_is_left_biased() {
        let tr = BTreeMap::from([
            ("fr".to_string(), "Marie Curie".to_string()),
            ("pl".to_string(), "Maria Skłodowska-Curie".to_string()),
            ("en".to_string(), "Someone Else".to_string()),
        ]);
        let r = attach_names(sample_record(), &tr);
        assert_eq!(r.names.len(), 3);
        assert_eq!(r.names["en"], "Marie Curie");
        assert_eq!(attach_names(sample_record(), &BTreeMap::new()), sample_record());
    }

    #[test]
    fn popularity_enrichment() {
        let raw = RawPerson { qid: "Q1".into(), ..Default::default() };
        assert_eq!(enrich_popularity(raw.clone(), 12034).unwrap().popularity, Some(12034));
        assert_eq!(enrich_popularity(raw.clone(), 1).unwrap().popularity, Some(1));
        assert_eq!(enrich_popularity(raw, 0), Err(RecordRejection::ZeroPopularity));
    }

    #[test]
    fn coverage_flags_without_dropping() {
        let mut recs = Vec::new();
        for i in 0..9 {
            recs.push(PersonRecord { qid: format!("A{i}"), nationality: "IS".into(), ..sample_record() });
        }
        for i in 0..10 {
            recs.push(PersonRecord { qid: format!("B{i}"), nationality: "NO".into(), ..sample_record() });
        }
        let rep = coverage_report(&recs, MIN_PER_COUNTRY);
        assert_eq!(rep.counts["IS"], 9);
        assert!(rep.flagged.contains("IS"));
        assert!(!rep.flagged.contains("NO"));
        assert!(rep.is_eligible("NO") && !rep.is_eligible("IS"));
        assert_eq!(rep.to_csv(), "country,count,flagged\nIS,9,true\nNO,10,false\n");
        assert!(coverage_report(&[], 10).counts.is_empty());
    }

    #[test]
    fn pipeline_accounts_for_every_group() {
        let t = table(vec![
            col("player", &["Ann Lee", "ann lee", "Bo Chan", "Cy Dee", "Ed Fox"]),
            col("nationality", &["FR", "FR", "DE", "DE", "DE"]),
            col("birth_date", &["1900", "1900", "1950", "1960", "1970"]),
            col("birthplace", &["Lyon", "Lyon", "Bonn", "Köln", "Ulm"]),
            col("biography", &["A.", "A.", "B.", "C.", "E."]),
        ]);
        let inputs = IngestInputs {
            tables: vec![t],
            qid_map: BTreeMap::from([
                ("Ann Lee".to_string(), "Q1".to_string()),
                ("Bo Chan".to_string(), "Q2".to_string()),
                ("Cy Dee".to_string(), "Q3".to_string()),
            ]),
            translations: BTreeMap::from([("Q1".to_string(), BTreeMap::from([("fr".to_string(), "Anne Lee".to_string())]))]),
            pageviews: BTreeMap::from([("Q1".to_string(), 10), ("Q2".to_string(), 0)]),
        };
        let out = run_pipeline(&inputs, &IngestConfig::default(), &HeuristicTagger).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].names.len(), 2);
        let reasons: Vec<_> = out.rejections.iter().map(|r| r.reason.clone()).collect();
        // Q2 has zero views, Q3 none recorded
        assert_eq!(reasons.iter().filter(|r| **r == RecordRejection::ZeroPopularity).count(), 2);
        assert!(reasons.contains(&RecordRejection::NoQid("Ed Fox".into())));
        assert_eq!(out.stats.qid_groups + out.stats.unmapped_groups, out.records.len() + out.rejections.len());
    }
}
