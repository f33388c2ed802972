//! Text and face embedders: deterministic stubs for hermetic runs, and an HTTP
//! client for an external embedding service.
//!
//! Embeddings are persisted as sidecar files: a `dim=<int>` header line followed
//! by `qid<TAB>comma-separated floats` lines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{canonical_name, EmbeddingVector, PersonRecord};
use crate::http::{HttpError, JsonClient};
use crate::io::IoError;
use crate::pool::bounded_map;

pub const DEFAULT_STUB_DIM: usize = 64;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
pub const DEFAULT_MAX_BATCH: usize = 32;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error(transparent)]
    Transport(HttpError),
    #[error("bad response: {0}")]
    BadResponse(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

impl From<HttpError> for EmbedError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::BadResponse { message, .. } => EmbedError::BadResponse(message),
            t => EmbedError::Transport(t),
        }
    }
}

/// Maps text to a unit vector of constant dimension.
pub trait TextEmbedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
    fn dim(&self) -> usize;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// Maps face image bytes to a unit vector of constant dimension.
pub trait FaceEmbedder: Send + Sync {
    fn embed(&self, image: &[u8]) -> Result<EmbeddingVector, EmbedError>;
    fn dim(&self) -> usize;
}

fn keyed_expansion(bytes: &[u8], dim: usize, seed: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    let mut counter: u64 = 0;
    while out.len() < dim {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(counter.to_le_bytes());
        h.update(bytes);
        let digest = h.finalize();
        for chunk in digest.chunks_exact(8) {
            if out.len() == dim {
                break;
            }
            let word = u64::from_le_bytes(chunk.try_into().unwrap());
            // 53 high bits → [0, 1) → [-1, 1)
            let unit = (word >> 11) as f64 / (1u64 << 53) as f64;
            out.push(unit * 2.0 - 1.0);
        }
        counter += 1;
    }
    out
}

fn token_key(bytes: &[u8], seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(bytes);
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Next value in [-1, 1) from a splitmix64 stream.
fn splitmix64(state: &mut u64) -> f64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Keyed-hash embedding of the whole text. Equal inputs give equal vectors; any
/// difference in the text gives an unrelated vector.
pub fn stub_embed(text: &str, dim: usize, seed: u64) -> EmbeddingVector {
    assert!(dim >= 2, "stub embedding dimension must be at least 2");
    bytes_embed(text.as_bytes(), dim, seed)
}

fn bytes_embed(bytes: &[u8], dim: usize, seed: u64) -> EmbeddingVector {
    let raw = keyed_expansion(bytes, dim, seed);
    // A SHA-256 expansion of dim ≥ 2 never yields an all-zero vector in practice;
    // fall back to a basis vector rather than panic.
    EmbeddingVector::normalized(raw).unwrap_or_else(|_| {
        let mut e = vec![0.0; dim];
        e[0] = 1.0;
        EmbeddingVector::normalized(e).unwrap()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl StubEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 2, "stub embedding dimension must be at least 2");
        Self { dim, seed }
    }
}

impl Default for StubEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_STUB_DIM, 0)
    }
}

impl TextEmbedder for StubEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(stub_embed(text, self.dim, self.seed))
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// Bag-of-tokens stub: sums per-token vectors drawn from a hash-keyed stream.
///
/// Texts that share words get positively correlated vectors, which gives
/// semantic-search fixtures something lexical to rank on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl HashingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 2, "stub embedding dimension must be at least 2");
        Self { dim, seed }
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_STUB_DIM, 0)
    }
}

impl TextEmbedder for HashingEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let canon = canonical_name(text);
        let mut acc = vec![0.0; self.dim];
        let mut any = false;
        for tok in canon.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            any = true;
            let mut state = token_key(tok.as_bytes(), self.seed);
            for a in acc.iter_mut() {
                *a += splitmix64(&mut state);
            }
        }
        if !any {
            return Ok(stub_embed(text, self.dim, self.seed));
        }
        Ok(EmbeddingVector::normalized(acc).unwrap_or_else(|_| stub_embed(text, self.dim, self.seed)))
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// Keyed-hash face stub over raw image bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubFaceEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl FaceEmbedder for StubFaceEmbedder {
    fn embed(&self, image: &[u8]) -> Result<EmbeddingVector, EmbedError> {
        Ok(bytes_embed(image, self.dim, self.seed))
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for `POST {"texts":[...]}` → `{"vectors":[[...],...]}`.
pub struct RemoteEmbedder {
    client: JsonClient,
    dim: usize,
    max_batch: usize,
    max_in_flight: usize,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, dim: usize) -> Self {
        Self {
            client: JsonClient::new(endpoint, Duration::from_secs(60)),
            dim,
            max_batch: DEFAULT_MAX_BATCH,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }

    pub fn with_max_batch(mut self, n: usize) -> Self {
        self.max_batch = n.max(1);
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    fn call(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let resp: EmbedResponse = self.client.post(&EmbedRequest { texts })?;
        if resp.vectors.len() != texts.len() {
            return Err(EmbedError::BadResponse(format!(
                "{} vectors for {} texts",
                resp.vectors.len(),
                texts.len()
            )));
        }
        resp.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(EmbedError::DimensionMismatch { expected: self.dim, got: v.len() });
                }
                EmbeddingVector::normalized(v).map_err(|e| EmbedError::BadResponse(e.to_string()))
            })
            .collect()
    }
}

impl TextEmbedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.call(&[text])?.remove(0))
    }

    fn dim(&self) -> usize {
        self.dim
    }

    /// Splits into batches of at most `max_batch` and keeps at most
    /// `max_in_flight` requests open. Output order matches input order.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let chunks: Vec<&[&str]> = texts.chunks(self.max_batch).collect();
        let mut out = Vec::with_capacity(texts.len());
        for r in bounded_map(&chunks, self.max_in_flight, |c| self.call(c)) {
            out.extend(r?);
        }
        Ok(out)
    }
}

/// Embeddings keyed by qid, all of one dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: BTreeMap<String, EmbeddingVector>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, vectors: BTreeMap::new() }
    }

    pub fn insert(&mut self, qid: impl Into<String>, v: EmbeddingVector) -> Result<(), EmbedError> {
        if v.dim() != self.dim {
            return Err(EmbedError::DimensionMismatch { expected: self.dim, got: v.dim() });
        }
        self.vectors.insert(qid.into(), v);
        Ok(())
    }

    /// Sidecar text. Floats use Rust's shortest round-trip formatting.
    pub fn to_sidecar(&self) -> String {
        let mut out = format!("dim={}\n", self.dim);
        for (qid, v) in &self.vectors {
            out.push_str(qid);
            out.push('\t');
            for (i, x) in v.as_slice().iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write!(out, "{x:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_sidecar(text: &str, path: &Path) -> Result<Self, IoError> {
        let mut lines = text.lines().enumerate();
        let dim = lines
            .next()
            .and_then(|(_, l)| l.trim().strip_prefix("dim="))
            .and_then(|d| d.trim().parse::<usize>().ok())
            .filter(|d| *d > 0)
            .ok_or_else(|| IoError::parse(path, 1, "expected `dim=<positive int>` header"))?;
        let mut table = EmbeddingTable::new(dim);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (qid, floats) = line
                .split_once('\t')
                .ok_or_else(|| IoError::parse(path, i + 1, "expected qid<TAB>floats"))?;
            let values = floats
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| IoError::parse(path, i + 1, e.to_string()))?;
            if values.len() != dim {
                return Err(IoError::parse(path, i + 1, format!("expected {dim} values, got {}", values.len())));
            }
            let v = EmbeddingVector::normalized(values).map_err(|e| IoError::parse(path, i + 1, e.to_string()))?;
            table.vectors.insert(qid.trim().to_string(), v);
        }
        Ok(table)
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        Self::parse_sidecar(&text, path)
    }
}

/// Embeds every record's biography in one batch.
pub fn embed_biographies(records: &[PersonRecord], embedder: &dyn TextEmbedder) -> Result<EmbeddingTable, EmbedError> {
    let texts: Vec<&str> = records.iter().map(|r| r.biography.as_str()).collect();
    let mut table = EmbeddingTable::new(embedder.dim());
    for (r, v) in records.iter().zip(embedder.embed_batch(&texts)?) {
        table.insert(r.qid.clone(), v)?;
    }
    Ok(table)
}
