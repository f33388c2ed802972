//! Benchmark subject selection.
//!
//! Per eligible country: a cluster count from the country's population share,
//! a three-way popularity split, per-tier k-means over (birth era, biography)
//! features, and one representative per cluster.

mod kmeans;

pub use kmeans::{kmeans, squared_distance, KMeansFit};

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{collapse_whitespace, country_language, nationality_names, normalize_nationality, PersonRecord, PopularityTier};
use crate::embed::{EmbedError, TextEmbedder};
use crate::ingest::CoverageReport;
use crate::io::IoError;

const DEMONYMS: &str = include_str!("../../data/demonyms.txt");

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("population proportion {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("k = {k} exceeds the {n} points available")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// `⌈5p + 0.01⌉` for a population share `p ∈ [0, 1]`; always at least 1.
pub fn cluster_count(p: f64) -> Result<usize, SamplerError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(SamplerError::OutOfRange(p));
    }
    Ok((p * 5.0 + 0.01).ceil() as usize)
}

/// Nearest multiple of 50; exact midpoints round up (1875 → 1900, −25 → 0).
pub fn quantize_year(year: i32) -> i32 {
    (i64::from(year) + 25).div_euclid(50) as i32 * 50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryPlan {
    pub country: String,
    pub population_proportion: f64,
    pub k: usize,
}

/// Qids per tier, each list in (popularity desc, qid asc) order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TierAssignment {
    pub high: Vec<String>,
    pub medium: Vec<String>,
    pub low: Vec<String>,
}

impl TierAssignment {
    pub fn tier(&self, t: PopularityTier) -> &[String] {
        match t {
            PopularityTier::High => &self.high,
            PopularityTier::Medium => &self.medium,
            PopularityTier::Low => &self.low,
        }
    }

    pub fn tier_of(&self, qid: &str) -> Option<PopularityTier> {
        PopularityTier::ALL.into_iter().find(|&t| self.tier(t).iter().any(|q| q == qid))
    }

    pub fn len(&self) -> usize {
        self.high.len() + self.medium.len() + self.low.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// High = top `min(5k, n)`; Medium = the rest of the top `⌈0.75n⌉`; Low = everything else.
pub fn tier_split(records: &[&PersonRecord], k: usize) -> TierAssignment {
    let mut sorted: Vec<&PersonRecord> = records.to_vec();
    sorted.sort_by(|a, b| b.popularity.cmp(&a.popularity).then_with(|| a.qid.cmp(&b.qid)));
    let n = sorted.len();
    let high_end = (5 * k).min(n);
    let top75 = (3 * n).div_ceil(4);
    let medium_end = top75.max(high_end);
    let qids = |s: &[&PersonRecord]| s.iter().map(|r| r.qid.clone()).collect::<Vec<_>>();
    TierAssignment {
        high: qids(&sorted[..high_end]),
        medium: qids(&sorted[high_end..medium_end]),
        low: qids(&sorted[medium_end..]),
    }
}

fn year_regex() -> &'static [Regex] {
    static RES: OnceLock<Vec<Regex>> = OnceLock::new();
    RES.get_or_init(|| {
        let mut words: Vec<String> = DEMONYMS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .chain(nationality_names().map(str::to_string))
            .collect();
        // longest first so "Kingdom of Prussia" wins over "Prussia"
        words.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        words.dedup();
        let alternation = words.iter().map(|w| regex::escape(w)).collect::<Vec<_>>().join("|");
        vec![
            Regex::new(r"(?i)\b(?:aged?|at the age of)\s+\d{1,3}\b").unwrap(),
            Regex::new(r"(?i)\b\d{1,3}[- ]years?[- ]old\b").unwrap(),
            Regex::new(r"(?i)\b\d{4}s?\b").unwrap(),
            Regex::new(&format!(r"(?i)\b(?:{alternation})\b")).unwrap(),
        ]
    })
}

/// Removes years, ages, country names and demonyms from a biography.
pub fn mask_biography(text: &str) -> String {
    let mut out = text.to_string();
    for re in year_regex() {
        out = re.replace_all(&out, " ").into_owned();
    }
    collapse_whitespace(&out)
}

/// Biography embedding with one appended date coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub qid: String,
    pub values: Vec<f64>,
}

/// Masked-biography embedding followed by `w · (quantize_year(y) − 1000) / 1000`.
pub fn build_features(
    records: &[&PersonRecord],
    embedder: &dyn TextEmbedder,
    date_weight: f64,
) -> Result<Vec<FeatureVector>, SamplerError> {
    let masked: Vec<String> = records.iter().map(|r| mask_biography(&r.biography)).collect();
    let refs: Vec<&str> = masked.iter().map(String::as_str).collect();
    let embeddings = embedder.embed_batch(&refs)?;
    Ok(records
        .iter()
        .zip(embeddings)
        .map(|(r, e)| {
            let mut values = e.into_inner();
            values.push(date_weight * f64::from(quantize_year(r.birth_date.year) - 1000) / 1000.0);
            FeatureVector { qid: r.qid.clone(), values }
        })
        .collect())
}

/// One subject per non-empty cluster, in cluster order.
///
/// High and Medium pick the member nearest the centroid; Low picks the most
/// popular member. Ties go to the smaller qid.
pub fn select_representatives(
    tier: PopularityTier,
    members: &[&PersonRecord],
    features: &[FeatureVector],
    fit: &KMeansFit,
) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    for (cluster, centroid) in fit.centroids.iter().enumerate() {
        let in_cluster = (0..members.len()).filter(|&i| fit.assignments[i] == cluster);
        let best = match tier {
            PopularityTier::High | PopularityTier::Medium => in_cluster.min_by(|&a, &b| {
                let da = squared_distance(&features[a].values, centroid);
                let db = squared_distance(&features[b].values, centroid);
                da.total_cmp(&db).then_with(|| members[a].qid.cmp(&members[b].qid))
            }),
            PopularityTier::Low => in_cluster.min_by(|&a, &b| {
                members[b].popularity.cmp(&members[a].popularity).then_with(|| members[a].qid.cmp(&members[b].qid))
            }),
        };
        if let Some(i) = best {
            out.push((cluster, members[i].qid.clone()));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub seed: u64,
    pub date_weight: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { seed: 42, date_weight: 1.0, max_iter: 100, tol: 1e-6 }
    }
}

/// One selected benchmark subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub qid: String,
    pub country: String,
    pub tier: PopularityTier,
    pub cluster: usize,
    pub original_language: String,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed for one (country, tier) k-means run, independent of processing order.
pub fn derived_seed(seed: u64, country: &str, tier: PopularityTier) -> u64 {
    let tier_mix = (tier as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    seed ^ fnv1a(country.as_bytes()) ^ tier_mix
}

/// Country language from the shipped table, else the record's only non-English
/// name language, else English.
pub fn original_language(record: &PersonRecord) -> String {
    if let Some(l) = country_language(&record.nationality) {
        return l.to_string();
    }
    let others: Vec<&String> = record.names.keys().filter(|l| l.as_str() != "en").collect();
    match others.as_slice() {
        [only] => (*only).clone(),
        _ => "en".to_string(),
    }
}

/// Cluster plans for every eligible country. Countries absent from the
/// population table get share 0 (one cluster).
pub fn country_plans(
    records: &[PersonRecord],
    population: &BTreeMap<String, f64>,
    coverage: &CoverageReport,
) -> Result<Vec<CountryPlan>, SamplerError> {
    let mut countries: Vec<&str> = records.iter().map(|r| r.nationality.as_str()).collect();
    countries.sort_unstable();
    countries.dedup();
    countries
        .into_iter()
        .filter(|c| coverage.is_eligible(c))
        .map(|c| {
            let p = population.get(c).copied().unwrap_or(0.0);
            Ok(CountryPlan { country: c.to_string(), population_proportion: p, k: cluster_count(p)? })
        })
        .collect()
}

fn sample_country(
    plan: &CountryPlan,
    people: &[&PersonRecord],
    embedder: &dyn TextEmbedder,
    cfg: &SamplerConfig,
) -> Result<Vec<ManifestEntry>, SamplerError> {
    let tiers = tier_split(people, plan.k);
    let by_qid: BTreeMap<&str, &PersonRecord> = people.iter().map(|r| (r.qid.as_str(), *r)).collect();
    let mut out = Vec::new();
    for tier in PopularityTier::ALL {
        let members: Vec<&PersonRecord> = tiers.tier(tier).iter().map(|q| by_qid[q.as_str()]).collect();
        if members.is_empty() {
            continue;
        }
        let features = build_features(&members, embedder, cfg.date_weight)?;
        let points: Vec<Vec<f64>> = features.iter().map(|f| f.values.clone()).collect();
        let k = plan.k.min(members.len());
        let fit = kmeans(&points, k, derived_seed(cfg.seed, &plan.country, tier), cfg.max_iter, cfg.tol)?;
        for (cluster, qid) in select_representatives(tier, &members, &features, &fit) {
            let record = by_qid[qid.as_str()];
            out.push(ManifestEntry {
                original_language: original_language(record),
                qid,
                country: plan.country.clone(),
                tier,
                cluster,
            });
        }
    }
    Ok(out)
}

/// Selects benchmark subjects from every eligible country.
///
/// Deterministic under `cfg.seed`; output sorted by (country, tier, cluster).
pub fn sample_benchmark(
    records: &[PersonRecord],
    population: &BTreeMap<String, f64>,
    coverage: &CoverageReport,
    embedder: &dyn TextEmbedder,
    cfg: &SamplerConfig,
) -> Result<Vec<ManifestEntry>, SamplerError> {
    let plans = country_plans(records, population, coverage)?;
    let mut by_country: BTreeMap<&str, Vec<&PersonRecord>> = BTreeMap::new();
    for r in records {
        by_country.entry(r.nationality.as_str()).or_default().push(r);
    }
    let per_country: Vec<Result<Vec<ManifestEntry>, SamplerError>> = plans
        .par_iter()
        .map(|plan| sample_country(plan, &by_country[plan.country.as_str()], embedder, cfg))
        .collect();
    let mut manifest = Vec::new();
    for r in per_country {
        manifest.extend(r?);
    }
    manifest.sort_by(|a, b| (&a.country, a.tier, a.cluster).cmp(&(&b.country, b.tier, b.cluster)));
    Ok(manifest)
}

/// Reads a `country,proportion` CSV. Country names are normalized to codes.
pub fn read_population(path: &Path) -> Result<BTreeMap<String, f64>, SamplerError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IoError::parse(path, 0, e.to_string()))?;
    let mut out = BTreeMap::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| IoError::parse(path, line, e.to_string()))?;
        let (Some(country), Some(p)) = (row.get(0), row.get(1)) else {
            return Err(IoError::parse(path, line, "expected country,proportion").into());
        };
        let code = normalize_nationality(country)
            .map(str::to_string)
            .unwrap_or_else(|| country.to_ascii_uppercase());
        let p: f64 = p.parse().map_err(|_| IoError::parse(path, line, format!("bad proportion `{p}`")))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(SamplerError::OutOfRange(p));
        }
        out.insert(code, p);
    }
    Ok(out)
}
