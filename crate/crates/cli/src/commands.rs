use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use serde::Serialize;

use persona::benchgen::{generate_benchmark, BenchmarkItem, GenConfig, HttpLlmClient, LlmClient, StubLlm};
use persona::domain::{BloomLevel, EmbeddingVector, LanguageVariant, PersonRecord};
use persona::embed::{embed_biographies, EmbeddingTable, HashingEmbedder, RemoteEmbedder, TextEmbedder, DEFAULT_STUB_DIM};
use persona::eval::{aggregate, evaluate, render_report, ConstantModel, EvalCondition, EvalConfig, EvalOutcome, FewShot, RagContext};
use persona::index::StoreIndex;
use persona::ingest::{
    coverage_report, read_pageviews, read_tables, read_translations, run_pipeline, HeuristicTagger, IngestConfig,
    IngestInputs,
};
use persona::io::{read_jsonl, read_tsv_map, to_jsonl, write_atomic, IoError};
use persona::retrieval::{retrieve, PromptTemplate, RagConfig, RetrievalError, RetrievalQuery, Stage};
use persona::sampler::{read_population, sample_benchmark, ManifestEntry, SamplerConfig};

use crate::config::FileConfig;
use crate::{selftest, Cli, Command, Ctx, Failure, GlobalArgs, Streams};

macro_rules! diag {
    ($st:expr, $($arg:tt)*) => {{
        let _ = writeln!($st.err, $($arg)*);
    }};
}

macro_rules! emitln {
    ($st:expr, $($arg:tt)*) => {
        writeln!($st.out, $($arg)*).map_err(Failure::io)?
    };
}

macro_rules! emit {
    ($st:expr, $($arg:tt)*) => {
        write!($st.out, $($arg)*).map_err(Failure::io)?
    };
}

pub const DEFAULT_CONCURRENCY: usize = 4;

struct Settings {
    global: GlobalArgs,
    file: FileConfig,
}

impl Settings {
    fn concurrency(&self) -> usize {
        self.global.concurrency.or(self.file.concurrency).unwrap_or(DEFAULT_CONCURRENCY).max(1)
    }

    fn embedder(&self) -> Result<Box<dyn TextEmbedder>, Failure> {
        let dim = self.global.embed_dim.or(self.file.embed_dim).unwrap_or(DEFAULT_STUB_DIM);
        if dim < 2 {
            return Err(Failure::invalid(anyhow!("--embed-dim must be at least 2")));
        }
        let endpoint = self
            .global
            .embed_endpoint
            .clone()
            .or_else(|| self.file.embed_endpoint.clone())
            .ok_or_else(|| Failure::invalid(anyhow!("no embedding endpoint: pass --embed-endpoint or set EMBED_ENDPOINT")))?;
        Ok(match endpoint.as_str() {
            "stub" => Box::new(HashingEmbedder::new(dim, 0)),
            url => Box::new(RemoteEmbedder::new(url, dim).with_max_in_flight(self.concurrency())),
        })
    }

    fn rag(&self) -> RagConfig {
        self.file.rag.apply(RagConfig::default())
    }
}

fn require_file(flag: &str, path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::invalid(anyhow!("{flag}: no such file: {}", path.display())))
    }
}

fn write_out(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    write_atomic(path, contents)?;
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<PersonRecord>, Failure> {
    require_file("--db", path)?;
    read_jsonl(path).ctx("reading --db")
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, Failure> {
    require_file("--manifest", path)?;
    read_jsonl(path).ctx("reading --manifest")
}

fn load_index(db: &Path, embeddings: &Path, faces: Option<&Path>) -> Result<StoreIndex, Failure> {
    let records = read_records(db)?;
    require_file("--embeddings", embeddings)?;
    let bio = EmbeddingTable::read(embeddings).ctx("reading --embeddings")?;
    let face = match faces {
        Some(p) => {
            require_file("--face-embeddings", p)?;
            Some(EmbeddingTable::read(p).ctx("reading --face-embeddings")?)
        }
        None => None,
    };
    Ok(StoreIndex::build(records, &bio, face.as_ref())?)
}

pub(crate) fn dispatch(cli: Cli, st: &mut Streams<'_>) -> Result<(), Failure> {
    let file = match &cli.global.config {
        Some(p) => {
            require_file("--config", p)?;
            FileConfig::load(p).map_err(Failure::invalid)?
        }
        None => FileConfig::default(),
    };
    let s = Settings { global: cli.global, file };
    match cli.command {
        Command::Ingest(a) => ingest(st, a),
        Command::Index(a) => index(&s, st, a),
        Command::Retrieve(a) => retrieve_cmd(&s, st, a),
        Command::Sample(a) => sample(&s, st, a),
        Command::Generate(a) => generate(&s, st, a),
        Command::Evaluate(a) => evaluate_cmd(&s, st, a),
        Command::Report(a) => report(st, a),
        Command::Selftest(a) => {
            if selftest::run_all(!a.skip_e2e, st.out) {
                Ok(())
            } else {
                Err(Failure::invalid(anyhow!("selftest failed")))
            }
        }
    }
}

fn ingest(st: &mut Streams<'_>, a: crate::IngestArgs) -> Result<(), Failure> {
    require_file("--tables", &a.tables)?;
    require_file("--qid-map", &a.qid_map)?;
    let mut inputs = IngestInputs {
        tables: read_tables(&a.tables).ctx("reading --tables")?,
        qid_map: read_tsv_map(&a.qid_map).ctx("reading --qid-map")?,
        ..IngestInputs::default()
    };
    if let Some(p) = &a.translations {
        require_file("--translations", p)?;
        inputs.translations = read_translations(p).ctx("reading --translations")?;
    }
    if let Some(p) = &a.pageviews {
        require_file("--pageviews", p)?;
        inputs.pageviews = read_pageviews(p).ctx("reading --pageviews")?;
    }
    let mut cfg = IngestConfig::default();
    if let Some(n) = a.min_per_country {
        cfg.min_per_country = n;
    }
    if let Some(t) = a.threshold {
        cfg.detect.threshold = t;
    }
    if let Some(p) = a.patterns {
        cfg.detect.patterns = p;
    }
    let out = run_pipeline(&inputs, &cfg, &HeuristicTagger)?;
    write_out(&a.out.join("records.jsonl"), out.records_jsonl().as_bytes())?;
    write_out(&a.out.join("rejections.jsonl"), out.rejections_jsonl().as_bytes())?;
    write_out(&a.out.join("coverage.csv"), out.coverage.to_csv().as_bytes())?;
    for w in &out.warnings {
        diag!(st, "warning: {w}");
    }
    diag!(st, 
        "ingest: {} records, {} rejections, {} mentions from {} tables",
        out.records.len(),
        out.rejections.len(),
        out.stats.mentions,
        out.stats.tables
    );
    Ok(())
}

fn index(s: &Settings, st: &mut Streams<'_>, a: crate::IndexArgs) -> Result<(), Failure> {
    let records = read_records(&a.db)?;
    let embedder = s.embedder()?;
    let table = embed_biographies(&records, embedder.as_ref())?;
    let n = records.len();
    StoreIndex::build(records, &table, None)?;
    write_out(&a.out, table.to_sidecar().as_bytes())?;
    diag!(st, "index: {n} biographies embedded at dimension {}", table.dim);
    Ok(())
}

fn read_face_query(path: &Path) -> Result<EmbeddingVector, Failure> {
    require_file("--face-embedding-file", path)?;
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let values = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(str::parse::<f64>)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::invalid(anyhow!("--face-embedding-file: {e}")))?;
    EmbeddingVector::normalized(values).map_err(|e| Failure::invalid(anyhow!("--face-embedding-file: {e}")))
}

#[derive(Serialize)]
struct CandidateOut<'a> {
    qid: &'a str,
    name: &'a str,
    score: f64,
    provenance: &'a [Stage],
}

fn retrieve_cmd(s: &Settings, st: &mut Streams<'_>, a: crate::RetrieveArgs) -> Result<(), Failure> {
    let index = load_index(&a.db, &a.embeddings, a.face_embeddings.as_deref())?;
    let face = a.face_embedding_file.as_deref().map(read_face_query).transpose()?;
    let mut cfg = s.rag();
    if let Some(k) = a.k {
        cfg.semantic_k = k;
    }
    if let Some(l) = a.lambda {
        cfg.popularity_weight = l;
    }
    let query = RetrievalQuery {
        name: a.name,
        context: a.context,
        nationality: a.nationality,
        birth_year: a.birth_year,
        face,
        language: None,
    };
    let embedder: Box<dyn TextEmbedder> = if query.face.is_some() {
        // the face path never embeds text
        Box::new(HashingEmbedder::new(2, 0))
    } else {
        s.embedder()?
    };
    let candidates = match retrieve(&query, &index, embedder.as_ref(), &cfg) {
        Ok(c) => c,
        Err(RetrievalError::NoCandidates) => {
            diag!(st, "retrieve: no candidates");
            Vec::new()
        }
        Err(e) => return Err(e.into()),
    };
    let rows: Vec<CandidateOut<'_>> = candidates
        .iter()
        .map(|c| CandidateOut {
            qid: &c.qid,
            name: index.record(&c.qid).map_or("", |r| r.display_name(None)),
            score: c.score,
            provenance: &c.provenance,
        })
        .collect();
    if a.json {
        emitln!(st, "{}", serde_json::to_string_pretty(&rows).map_err(Failure::invalid)?);
    } else {
        for r in &rows {
            let stages: Vec<String> =
                r.provenance.iter().map(|p| serde_json::to_value(p).unwrap().as_str().unwrap_or("").to_string()).collect();
            emitln!(st, "{}\t{:.6}\t{}\t{}", r.qid, r.score, r.name, stages.join(","));
        }
    }
    Ok(())
}

fn sample(s: &Settings, st: &mut Streams<'_>, a: crate::SampleArgs) -> Result<(), Failure> {
    let records = read_records(&a.db)?;
    require_file("--population", &a.population)?;
    let population = read_population(&a.population).ctx("reading --population")?;
    let seed = a
        .seed
        .or(s.file.seed)
        .ok_or_else(|| Failure::invalid(anyhow!("a seed is required: pass --seed or set `seed` in the config file")))?;
    let cfg = SamplerConfig {
        seed,
        date_weight: a.date_weight.or(s.file.date_weight).unwrap_or(SamplerConfig::default().date_weight),
        ..SamplerConfig::default()
    };
    let coverage = coverage_report(&records, a.min_per_country.unwrap_or(persona::ingest::MIN_PER_COUNTRY));
    let embedder = s.embedder()?;
    let manifest = sample_benchmark(&records, &population, &coverage, embedder.as_ref(), &cfg)?;
    write_out(&a.out, to_jsonl(&manifest).as_bytes())?;
    let countries: BTreeSet<&str> = manifest.iter().map(|m| m.country.as_str()).collect();
    diag!(st, "sample: {} subjects from {} countries", manifest.len(), countries.len());
    Ok(())
}

fn generate(s: &Settings, st: &mut Streams<'_>, a: crate::GenerateArgs) -> Result<(), Failure> {
    let records: BTreeMap<String, PersonRecord> =
        read_records(&a.db)?.into_iter().map(|r| (r.qid.clone(), r)).collect();
    let manifest = read_manifest(&a.manifest)?;
    let endpoint = a
        .llm_endpoint
        .or_else(|| s.file.llm_endpoint.clone())
        .ok_or_else(|| Failure::invalid(anyhow!("no LLM endpoint: pass --llm-endpoint or set LLM_ENDPOINT")))?;
    let llm: Box<dyn LlmClient> = match endpoint.as_str() {
        "stub" => Box::new(StubLlm),
        url => Box::new(HttpLlmClient::new(url)),
    };
    let mut cfg = GenConfig { max_in_flight: s.concurrency(), ..GenConfig::default() };
    if let Some(levels) = a.image_levels {
        cfg.image_levels = levels
            .iter()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.parse::<BloomLevel>())
            .collect::<Result<_, _>>()
            .map_err(|e| Failure::invalid(anyhow!("--image-levels: {e}")))?;
    }
    if let Some(t) = a.max_tokens {
        cfg.params.max_tokens = t;
    }
    if let Some(r) = a.retries {
        cfg.retries = r;
    }
    let out = generate_benchmark(&manifest, &records, llm.as_ref(), &cfg)?;
    write_out(&a.out, to_jsonl(&out.items).as_bytes())?;
    diag!(st, "generate: {} items", out.items.len());
    for f in &out.failures {
        diag!(st, "error: {f}");
    }
    if !out.failures.is_empty() {
        return Err(Failure::invalid(anyhow!("{} subjects produced no valid items", out.failures.len())));
    }
    Ok(())
}

fn evaluate_cmd(s: &Settings, st: &mut Streams<'_>, a: crate::EvaluateArgs) -> Result<(), Failure> {
    require_file("--bench", &a.bench)?;
    let items: Vec<BenchmarkItem> = read_jsonl(&a.bench).ctx("reading --bench")?;
    let manifest: BTreeMap<String, ManifestEntry> =
        read_manifest(&a.manifest)?.into_iter().map(|m| (m.qid.clone(), m)).collect();
    let variant: LanguageVariant = a.variant.parse().map_err(|e: String| Failure::invalid(anyhow!("--variant: {e}")))?;
    let endpoint = a
        .model_endpoint
        .or_else(|| s.file.model_endpoint.clone())
        .ok_or_else(|| Failure::invalid(anyhow!("no model endpoint: pass --model-endpoint or set MODEL_ENDPOINT")))?;
    let model: Box<dyn LlmClient> = match endpoint.strip_prefix("stub") {
        Some("") => Box::new(ConstantModel("A".into())),
        Some(reply) if reply.starts_with(':') => Box::new(ConstantModel(reply[1..].to_string())),
        _ => Box::new(HttpLlmClient::new(endpoint.as_str())),
    };
    let fewshot = match &a.fewshot {
        Some(p) => {
            require_file("--fewshot", p)?;
            FewShot::read(p).ctx("reading --fewshot")?
        }
        None => FewShot::default(),
    };
    let cond = EvalCondition { rag: a.rag, image: a.image, variant, model: a.model_id.unwrap_or_else(|| endpoint.clone()) };
    let cfg = EvalConfig { max_in_flight: s.concurrency(), ..EvalConfig::default() };

    let rag_parts = if a.rag {
        let (Some(db), Some(emb)) = (&a.db, &a.embeddings) else {
            return Err(Failure::invalid(anyhow!("--rag needs --db and --embeddings")));
        };
        Some((load_index(db, emb, None)?, s.embedder()?))
    } else {
        None
    };
    let ctx = rag_parts.as_ref().map(|(index, embedder)| RagContext {
        index,
        embedder: embedder.as_ref(),
        config: s.rag(),
        template: PromptTemplate::default(),
        max_context: 3,
        manifest: &manifest,
    });
    let outcomes = evaluate(&items, &cond, model.as_ref(), ctx.as_ref(), &fewshot, &cfg)?;
    let outcomes_path = a.outcomes.clone().unwrap_or_else(|| default_outcomes_path(&a.out));
    write_out(&outcomes_path, to_jsonl(&outcomes).as_bytes())?;
    let cells = aggregate(&outcomes, &manifest)?;
    let (csv, text) = render_report(&cells);
    write_out(&a.out, csv.as_bytes())?;
    emit!(st, "{text}");
    let fallbacks = outcomes.iter().filter(|o| o.rag_fallback).count();
    let correct = outcomes.iter().filter(|o| o.correct).count();
    diag!(st, "evaluate: {correct}/{} correct, {fallbacks} answered without retrieved context", outcomes.len());
    Ok(())
}

fn default_outcomes_path(report: &Path) -> PathBuf {
    let stem = report.file_stem().map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
    report.with_file_name(format!("{stem}.outcomes.jsonl"))
}

fn report(st: &mut Streams<'_>, a: crate::ReportArgs) -> Result<(), Failure> {
    let manifest: BTreeMap<String, ManifestEntry> =
        read_manifest(&a.manifest)?.into_iter().map(|m| (m.qid.clone(), m)).collect();
    let mut outcomes: Vec<EvalOutcome> = Vec::new();
    for p in &a.outcomes {
        require_file("--outcomes", p)?;
        outcomes.extend(read_jsonl::<EvalOutcome>(p).ctx("reading --outcomes")?);
    }
    if outcomes.is_empty() {
        return Err(Failure::invalid(anyhow!("--outcomes: no outcomes to report")));
    }
    let cells = aggregate(&outcomes, &manifest)?;
    let (csv, text) = render_report(&cells);
    match &a.out {
        Some(path) => {
            write_out(path, csv.as_bytes())?;
            emit!(st, "{text}");
        }
        None => emit!(st, "{csv}"),
    }
    Ok(())
}
