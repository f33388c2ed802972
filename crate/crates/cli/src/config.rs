//! Key-value config file. Flags win over environment variables, which win
//! over values here.

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

use persona::retrieval::RagConfig;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub embed_endpoint: Option<String>,
    pub llm_endpoint: Option<String>,
    pub model_endpoint: Option<String>,
    pub embed_dim: Option<usize>,
    pub concurrency: Option<usize>,
    pub seed: Option<u64>,
    pub date_weight: Option<f64>,
    pub rag: RagSection,
}

/// Overrides for [`RagConfig`]; unset keys keep the defaults.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RagSection {
    pub semantic_k: Option<usize>,
    pub face_k: Option<usize>,
    pub face_final: Option<usize>,
    pub birth_window_years: Option<u32>,
    pub popularity_weight: Option<f64>,
    pub face_popularity: Option<bool>,
}

impl RagSection {
    pub fn apply(&self, mut cfg: RagConfig) -> RagConfig {
        if let Some(v) = self.semantic_k {
            cfg.semantic_k = v;
        }
        if let Some(v) = self.face_k {
            cfg.face_k = v;
        }
        if let Some(v) = self.face_final {
            cfg.face_final = v;
        }
        if let Some(v) = self.birth_window_years {
            cfg.birth_window_years = v;
        }
        if let Some(v) = self.popularity_weight {
            cfg.popularity_weight = v;
        }
        if let Some(v) = self.face_popularity {
            cfg.face_popularity = v;
        }
        cfg
    }
}

impl FileConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
