//! Immutable in-memory knowledge-store index: multilingual alias lookup and
//! exact cosine k-NN over dense per-channel matrices.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{canonical_name, dot, EmbeddingVector, PersonRecord};
use crate::embed::EmbeddingTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Biography,
    Face,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Biography => "biography",
            Channel::Face => "face",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("record {0} has no biography embedding")]
    MissingEmbedding(String),
    #[error("{channel} dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { channel: Channel, expected: usize, got: usize },
    #[error("duplicate qid {0}")]
    DuplicateQid(String),
    #[error("{channel} embedding for unknown qid {qid}")]
    UnknownQid { channel: Channel, qid: String },
    #[error("k must be at least 1")]
    InvalidK,
}

/// One k-NN hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub qid: String,
    pub score: f64,
    pub channel: Channel,
}

/// Ranking order for hits: score descending, then qid ascending.
pub fn hit_order(a_score: f64, a_qid: &str, b_score: f64, b_qid: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_qid.cmp(b_qid))
}

#[derive(Debug, Clone)]
struct DenseChannel {
    dim: usize,
    /// Record position for each matrix row.
    rows: Vec<usize>,
    /// Row-major, `rows.len() * dim`.
    data: Vec<f64>,
    row_of: HashMap<usize, usize>,
}

impl DenseChannel {
    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }
}

/// Write-once store of records plus their embedding channels.
#[derive(Debug, Clone)]
pub struct StoreIndex {
    records: Vec<PersonRecord>,
    by_qid: HashMap<String, usize>,
    aliases: BTreeMap<String, BTreeSet<String>>,
    channels: BTreeMap<Channel, DenseChannel>,
}

impl StoreIndex {
    /// Builds the index. Every record needs a biography embedding; face
    /// embeddings are optional per record.
    pub fn build(
        records: Vec<PersonRecord>,
        biography: &EmbeddingTable,
        face: Option<&EmbeddingTable>,
    ) -> Result<Self, IndexError> {
        let mut records = records;
        records.sort_by(|a, b| a.qid.cmp(&b.qid));
        let mut by_qid = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if by_qid.insert(r.qid.clone(), i).is_some() {
                return Err(IndexError::DuplicateQid(r.qid.clone()));
            }
        }

        let mut aliases: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for r in &records {
            for name in r.names.values() {
                let key = canonical_name(name);
                if !key.is_empty() {
                    aliases.entry(key).or_default().insert(r.qid.clone());
                }
            }
        }

        let mut channels = BTreeMap::new();
        for r in &records {
            if !biography.vectors.contains_key(&r.qid) {
                return Err(IndexError::MissingEmbedding(r.qid.clone()));
            }
        }
        channels.insert(Channel::Biography, dense(Channel::Biography, &records, &by_qid, biography)?);
        if let Some(face) = face {
            channels.insert(Channel::Face, dense(Channel::Face, &records, &by_qid, face)?);
        }
        Ok(Self { records, by_qid, aliases, channels })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in qid order.
    pub fn records(&self) -> &[PersonRecord] {
        &self.records
    }

    pub fn record(&self, qid: &str) -> Option<&PersonRecord> {
        self.by_qid.get(qid).map(|&i| &self.records[i])
    }

    pub fn alias_count(&self) -> usize {
        self.aliases.len()
    }

    /// Number of rows in a channel (0 if absent).
    pub fn channel_len(&self, channel: Channel) -> usize {
        self.channels.get(&channel).map_or(0, |c| c.rows.len())
    }

    pub fn channel_dim(&self, channel: Channel) -> Option<usize> {
        self.channels.get(&channel).map(|c| c.dim)
    }

    pub fn embedding(&self, channel: Channel, qid: &str) -> Option<&[f64]> {
        let ch = self.channels.get(&channel)?;
        let pos = *self.by_qid.get(qid)?;
        ch.row_of.get(&pos).map(|&r| ch.row(r))
    }

    /// Qids whose canonicalized alias (in any language) equals the canonicalized query.
    pub fn exact_lookup(&self, name: &str) -> BTreeSet<String> {
        self.aliases.get(&canonical_name(name)).cloned().unwrap_or_default()
    }

    /// Exact top-`k` by cosine similarity, ties by qid ascending.
    pub fn knn(&self, channel: Channel, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        let Some(ch) = self.channels.get(&channel) else {
            return Ok(Vec::new());
        };
        if query.dim() != ch.dim {
            return Err(IndexError::DimensionMismatch { channel, expected: ch.dim, got: query.dim() });
        }
        let q = query.as_slice();
        let mut scored: Vec<(f64, usize)> = (0..ch.rows.len()).map(|r| (dot(q, ch.row(r)), ch.rows[r])).collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            hit_order(a.0, &self.records[a.1].qid, b.0, &self.records[b.1].qid)
        };
        let take = k.min(scored.len());
        if take < scored.len() {
            scored.select_nth_unstable_by(take, cmp);
            scored.truncate(take);
        }
        scored.sort_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(score, pos)| ScoredHit { qid: self.records[pos].qid.clone(), score, channel })
            .collect())
    }
}

fn dense(
    channel: Channel,
    records: &[PersonRecord],
    by_qid: &HashMap<String, usize>,
    table: &EmbeddingTable,
) -> Result<DenseChannel, IndexError> {
    let dim = table.dim;
    for qid in table.vectors.keys() {
        if !by_qid.contains_key(qid) {
            return Err(IndexError::UnknownQid { channel, qid: qid.clone() });
        }
    }
    let mut rows = Vec::new();
    let mut data = Vec::new();
    let mut row_of = HashMap::new();
    for (pos, r) in records.iter().enumerate() {
        if let Some(v) = table.vectors.get(&r.qid) {
            if v.dim() != dim {
                return Err(IndexError::DimensionMismatch { channel, expected: dim, got: v.dim() });
            }
            row_of.insert(pos, rows.len());
            rows.push(pos);
            data.extend_from_slice(v.as_slice());
        }
    }
    Ok(DenseChannel { dim, rows, data, row_of })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BirthDate;
    use crate::embed::stub_embed;

    fn person(qid: &str, names: &[(&str, &str)]) -> PersonRecord {
        PersonRecord {
            qid: qid.into(),
            names: names.iter().map(|(l, n)| (l.to_string(), n.to_string())).collect(),
            biography: format!("bio of {qid}"),
            birth_date: BirthDate::year(1900),
            birthplace: "X".into(),
            nationality: "DE".into(),
            popularity: 10,
            image_urls: vec![],
        }
    }

    fn bio_table(records: &[PersonRecord], dim: usize) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(dim);
        for r in records {
            t.insert(r.qid.clone(), stub_embed(&r.biography, dim, 7)).unwrap();
        }
        t
    }

    #[test]
    fn builds_and_sizes() {
        let recs = vec![person("Q1", &[("en", "A")]), person("Q2", &[("en", "B")]), person("Q3", &[("en", "C")])];
        let idx = StoreIndex::build(recs.clone(), &bio_table(&recs, 8), None).unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.channel_len(Channel::Biography), 3);
    }

    #[test]
    fn missing_biography_embedding() {
        let recs = vec![person("Q1", &[("en", "A")]), person("Q2", &[("en", "B")])];
        let t = bio_table(&recs[..1], 8);
        assert_eq!(StoreIndex::build(recs, &t, None).unwrap_err(), IndexError::MissingEmbedding("Q2".into()));
    }

    #[test]
    fn aliases_collapse_across_languages() {
        let recs = vec![person("Q937", &[("en", "Albert Einstein"), ("de", "Albert  EINSTEIN")])];
        let idx = StoreIndex::build(recs.clone(), &bio_table(&recs, 8), None).unwrap();
        assert_eq!(idx.alias_count(), 1);
        assert_eq!(idx.exact_lookup("albert einstein"), BTreeSet::from(["Q937".to_string()]));
    }

    #[test]
    fn exact_lookup_cases() {
        let recs = vec![
            person("Q7186", &[("en", "Marie Curie")]),
            person("Q10", &[("en", "John Smith")]),
            person("Q11", &[("en", "John Smith")]),
        ];
        let idx = StoreIndex::build(recs.clone(), &bio_table(&recs, 8), None).unwrap();
        assert_eq!(idx.exact_lookup("MARIE curie"), BTreeSet::from(["Q7186".to_string()]));
        assert!(idx.exact_lookup("Nonexistent Person").is_empty());
        assert_eq!(idx.exact_lookup("john smith").len(), 2);
    }

    #[test]
    fn knn_self_match_and_overflow_k() {
        let recs: Vec<_> = (0..5).map(|i| person(&format!("Q{i}"), &[("en", "n")])).collect();
        let t = bio_table(&recs, 16);
        let idx = StoreIndex::build(recs, &t, None).unwrap();
        let q = t.vectors["Q3"].clone();
        let hits = idx.knn(Channel::Biography, &q, 2).unwrap();
        assert_eq!(hits[0].qid, "Q3");
        assert!((hits[0].score - 1.0).abs() < 1e-6);
        let all = idx.knn(Channel::Biography, &q, 50).unwrap();
        assert_eq!(all.len(), 5);
        assert!(all.windows(2).all(|w| hit_order(w[0].score, &w[0].qid, w[1].score, &w[1].qid).is_lt()));
    }

    #[test]
    fn knn_ties_break_by_qid() {
        let recs: Vec<_> = ["Q9", "Q2", "Q5"].iter().map(|q| person(q, &[("en", "n")])).collect();
        let mut t = EmbeddingTable::new(2);
        for r in &recs {
            t.insert(r.qid.clone(), EmbeddingVector::normalized(vec![1.0, 1.0]).unwrap()).unwrap();
        }
        let idx = StoreIndex::build(recs, &t, None).unwrap();
        let q = EmbeddingVector::normalized(vec![1.0, 0.0]).unwrap();
        let hits = idx.knn(Channel::Biography, &q, 2).unwrap();
        assert_eq!(hits.iter().map(|h| h.qid.as_str()).collect::<Vec<_>>(), vec!["Q2", "Q5"]);
    }

    #[test]
    fn knn_dimension_mismatch_and_zero_k() {
        let recs = vec![person("Q1", &[("en", "A")])];
        let idx = StoreIndex::build(recs.clone(), &bio_table(&recs, 8), None).unwrap();
        let q = stub_embed("x", 4, 0);
        assert!(matches!(idx.knn(Channel::Biography, &q, 1), Err(IndexError::DimensionMismatch { .. })));
        let q = stub_embed("x", 8, 0);
        assert_eq!(idx.knn(Channel::Biography, &q, 0), Err(IndexError::InvalidK));
        assert!(idx.knn(Channel::Face, &q, 3).unwrap().is_empty());
    }

    #[test]
    fn face_channel_is_partial() {
        let recs = vec![person("Q1", &[("en", "A")]), person("Q2", &[("en", "B")])];
        let mut faces = EmbeddingTable::new(4);
        faces.insert("Q2", stub_embed("face", 4, 0)).unwrap();
        let idx = StoreIndex::build(recs.clone(), &bio_table(&recs, 8), Some(&faces)).unwrap();
        assert_eq!(idx.channel_len(Channel::Face), 1);
        assert!(idx.embedding(Channel::Face, "Q1").is_none());
        assert!(idx.embedding(Channel::Face, "Q2").is_some());
    }
}
