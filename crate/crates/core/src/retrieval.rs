//! Disambiguating retrieval over the store and prompt augmentation.
//!
//! Text queries go through a cascade: exact alias match, semantic k-NN over
//! biography embeddings, nationality filter, birth-year window, and a final
//! re-rank by cosine between each survivor's biography and the query context.
//! Face queries run k-NN on the face channel and then the same two filters.
//! Every stage a candidate passes through is recorded in its provenance.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{dot, normalize_nationality, EmbeddingVector, PersonRecord};
use crate::embed::{EmbedError, TextEmbedder};
use crate::index::{hit_order, Channel, IndexError, StoreIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    ExactMatch,
    Semantic,
    NationalityFilter,
    BirthdateFilter,
    ContextCosine,
    FaceKnn,
    PopularityRank,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetrievalQuery {
    pub name: Option<String>,
    pub context: Option<String>,
    pub nationality: Option<String>,
    pub birth_year: Option<i32>,
    pub face: Option<EmbeddingVector>,
    pub language: Option<String>,
}

impl RetrievalQuery {
    pub fn by_name(name: impl Into<String>) -> Self {
        Self { name: Some(name.into()), ..Self::default() }
    }

    fn name(&self) -> Option<&str> {
        self.name.as_deref().map(str::trim).filter(|s| !s.is_empty())
    }

    fn context(&self) -> Option<&str> {
        self.context.as_deref().map(str::trim).filter(|s| !s.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub qid: String,
    pub score: f64,
    pub provenance: Vec<Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagConfig {
    pub semantic_k: usize,
    pub face_k: usize,
    pub face_final: usize,
    pub birth_window_years: u32,
    /// Weight of log page views in the final score, in [0, 1].
    pub popularity_weight: f64,
    /// Apply popularity ranking to face results too.
    pub face_popularity: bool,
}

impl Default for RagConfig {
    fn default() -> Self {
        Self {
            semantic_k: 50,
            face_k: 100,
            face_final: 5,
            birth_window_years: 20,
            popularity_weight: 0.3,
            face_popularity: false,
        }
    }
}

impl RagConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let bad = |m: &str| Err(RetrievalError::InvalidConfig(m.to_string()));
        if self.semantic_k == 0 || self.face_k == 0 || self.face_final == 0 || self.birth_window_years == 0 {
            return bad("semantic_k, face_k, face_final and birth_window_years must be positive");
        }
        if !(0.0..=1.0).contains(&self.popularity_weight) {
            return bad("popularity_weight must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("query has no name, context, or face")]
    EmptyQuery,
    #[error("no candidates survived retrieval")]
    NoCandidates,
    #[error("index has no face channel")]
    NoFaceChannel,
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

fn sort_candidates(c: &mut [Candidate]) {
    c.sort_by(|a, b| hit_order(a.score, &a.qid, b.score, &b.qid));
}

/// Drops candidates whose nationality differs from the query's (when given).
fn nationality_filter(cands: &mut Vec<Candidate>, query: &RetrievalQuery, index: &StoreIndex) {
    let Some(raw) = query.nationality.as_deref().map(str::trim).filter(|s| !s.is_empty()) else {
        return;
    };
    let wanted = normalize_nationality(raw).map(str::to_string).unwrap_or_else(|| raw.to_ascii_uppercase());
    cands.retain(|c| index.record(&c.qid).is_some_and(|r| r.nationality == wanted));
    for c in cands.iter_mut() {
        c.provenance.push(Stage::NationalityFilter);
    }
}

/// Keeps candidates born within `window` years of the query year, inclusive.
fn birthdate_filter(cands: &mut Vec<Candidate>, query: &RetrievalQuery, index: &StoreIndex, window: u32) {
    let Some(year) = query.birth_year else {
        return;
    };
    cands.retain(|c| {
        index
            .record(&c.qid)
            .is_some_and(|r| (i64::from(r.birth_date.year) - i64::from(year)).unsigned_abs() <= u64::from(window))
    });
    for c in cands.iter_mut() {
        c.provenance.push(Stage::BirthdateFilter);
    }
}

/// Text disambiguation cascade. Returns at most `cfg.semantic_k` candidates.
pub fn disambiguate_text(
    query: &RetrievalQuery,
    index: &StoreIndex,
    embedder: &dyn TextEmbedder,
    cfg: &RagConfig,
) -> Result<Vec<Candidate>, RetrievalError> {
    cfg.validate()?;
    let name = query.name();
    let context = query.context();
    if name.is_none() && context.is_none() {
        return Err(RetrievalError::EmptyQuery);
    }

    if let Some(name) = name {
        let exact = index.exact_lookup(name);
        if exact.len() == 1 {
            let qid = exact.into_iter().next().unwrap();
            return Ok(vec![Candidate { qid, score: 1.0, provenance: vec![Stage::ExactMatch] }]);
        }
    }

    let text = match (name, context) {
        (Some(n), Some(c)) => format!("{n} {c}"),
        (Some(n), None) => n.to_string(),
        (None, Some(c)) => c.to_string(),
        (None, None) => unreachable!(),
    };
    let qvec = embedder.embed(&text)?;
    let mut cands: Vec<Candidate> = index
        .knn(Channel::Biography, &qvec, cfg.semantic_k)?
        .into_iter()
        .map(|h| Candidate { qid: h.qid, score: h.score, provenance: vec![Stage::Semantic] })
        .collect();

    nationality_filter(&mut cands, query, index);
    birthdate_filter(&mut cands, query, index, cfg.birth_window_years);

    if let Some(context) = context {
        if !cands.is_empty() {
            let cvec = embedder.embed(context)?;
            for c in &mut cands {
                let bio = index
                    .embedding(Channel::Biography, &c.qid)
                    .expect("every record has a biography embedding");
                c.score = dot(bio, cvec.as_slice());
                c.provenance.push(Stage::ContextCosine);
            }
            sort_candidates(&mut cands);
        }
    }

    if cands.is_empty() {
        return Err(RetrievalError::NoCandidates);
    }
    Ok(cands)
}

/// Face path: k-NN on the face channel, then nationality and birth-year
/// filters, keeping the `cfg.face_final` best face scores.
pub fn retrieve_by_face(
    query: &RetrievalQuery,
    index: &StoreIndex,
    cfg: &RagConfig,
) -> Result<Vec<Candidate>, RetrievalError> {
    cfg.validate()?;
    let face = query.face.as_ref().ok_or(RetrievalError::EmptyQuery)?;
    if index.channel_len(Channel::Face) == 0 {
        return Err(RetrievalError::NoFaceChannel);
    }
    let mut cands: Vec<Candidate> = index
        .knn(Channel::Face, face, cfg.face_k)?
        .into_iter()
        .map(|h| Candidate { qid: h.qid, score: h.score, provenance: vec![Stage::FaceKnn] })
        .collect();
    nationality_filter(&mut cands, query, index);
    birthdate_filter(&mut cands, query, index, cfg.birth_window_years);
    // knn output is already in (score desc, qid asc) order and filters preserve it.
    cands.truncate(cfg.face_final);
    if cands.is_empty() {
        return Err(RetrievalError::NoCandidates);
    }
    Ok(cands)
}

/// Re-ranks by `(1 − λ)·score + λ·log10(1 + pop) / log10(1 + max_pop)`,
/// where `max_pop` is taken over the candidate set.
pub fn popularity_rank(candidates: Vec<Candidate>, index: &StoreIndex, lambda: f64) -> Vec<Candidate> {
    let pops: Vec<u64> = candidates
        .iter()
        .map(|c| index.record(&c.qid).map_or(0, |r| r.popularity))
        .collect();
    let max_pop = pops.iter().copied().max().unwrap_or(0);
    let denom = (1.0 + max_pop as f64).log10();
    let mut out: Vec<Candidate> = candidates
        .into_iter()
        .zip(pops)
        .map(|(mut c, pop)| {
            let pop_term = if denom > 0.0 { (1.0 + pop as f64).log10() / denom } else { 0.0 };
            c.score = (1.0 - lambda) * c.score + lambda * pop_term;
            c.provenance.push(Stage::PopularityRank);
            c
        })
        .collect();
    sort_candidates(&mut out);
    out
}

/// Full pipeline: face path when a face is given, the text cascade otherwise,
/// then popularity ranking (faces only when `cfg.face_popularity` is set).
pub fn retrieve(
    query: &RetrievalQuery,
    index: &StoreIndex,
    embedder: &dyn TextEmbedder,
    cfg: &RagConfig,
) -> Result<Vec<Candidate>, RetrievalError> {
    if query.face.is_some() {
        let cands = retrieve_by_face(query, index, cfg)?;
        if cfg.face_popularity {
            return Ok(popularity_rank(cands, index, cfg.popularity_weight));
        }
        return Ok(cands);
    }
    let cands = disambiguate_text(query, index, embedder, cfg)?;
    Ok(popularity_rank(cands, index, cfg.popularity_weight))
}

/// Layout knobs for the augmented prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    /// Maximum biography length in characters, marker included.
    pub biography_budget: usize,
    /// Language used for candidate names, falling back to English.
    pub name_language: Option<String>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self { biography_budget: 1500, name_language: None }
    }
}

pub const TRUNCATION_MARKER: char = '…';

/// Cuts `text` to at most `budget` characters, ending in `…` when shortened.
pub fn truncate_chars(text: &str, budget: usize) -> String {
    if text.chars().count() <= budget {
        return text.to_string();
    }
    let keep = budget.saturating_sub(1);
    let mut out: String = text.chars().take(keep).collect();
    out.push(TRUNCATION_MARKER);
    out
}

/// Prepends a `CONTEXT:` block describing each candidate to the question.
///
/// # Panics
///
/// Panics if `candidates` is empty; callers treat "no candidates" as a
/// retrieval failure before reaching this point.
pub fn augment_prompt(question: &str, candidates: &[&PersonRecord], template: &PromptTemplate) -> String {
    assert!(!candidates.is_empty(), "augment_prompt needs at least one candidate");
    let mut out = String::from("CONTEXT:\n");
    for (i, r) in candidates.iter().enumerate() {
        let _ = writeln!(out, "[{}] Name: {}", i + 1, r.display_name(template.name_language.as_deref()));
        let _ = writeln!(out, "    Birth date: {}", r.birth_date);
        let _ = writeln!(out, "    Birthplace: {}", r.birthplace);
        let _ = writeln!(out, "    Nationality: {}", r.nationality);
        let _ = writeln!(out, "    Biography: {}", truncate_chars(&r.biography, template.biography_budget));
    }
    out.push_str("QUESTION:\n");
    out.push_str(question);
    if !question.ends_with('\n') {
        out.push('\n');
    }
    out
}
