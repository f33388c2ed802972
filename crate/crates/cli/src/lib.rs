//! `persona` command-line interface.
//!
//! Exit codes: 0 success, 1 invalid input or arguments, 2 I/O or endpoint
//! failure. Diagnostics go to stderr; data goes to files or stdout.

mod commands;
pub mod config;
pub mod selftest;

use std::ffi::OsString;
use std::fmt::Display;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use persona::benchgen::{GenError, LlmError};
use persona::embed::EmbedError;
use persona::eval::EvalError;
use persona::index::IndexError;
use persona::ingest::IngestError;
use persona::io::IoError;
use persona::retrieval::RetrievalError;
use persona::sampler::SamplerError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "persona", version, about = "Biographical knowledge store and benchmark toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML config file with defaults for any setting below.
    #[arg(long, env = "PERSONA_CONFIG", global = true)]
    pub config: Option<PathBuf>,
    /// Embedding service URL, or `stub` for the offline hashing embedder.
    #[arg(long, env = "EMBED_ENDPOINT", global = true)]
    pub embed_endpoint: Option<String>,
    /// Embedding dimension (default 64).
    #[arg(long, global = true)]
    pub embed_dim: Option<usize>,
    /// Maximum concurrent endpoint calls (default 4).
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tables → validated person records, rejection log and coverage report.
    Ingest(IngestArgs),
    /// Embeds biographies into a sidecar file.
    Index(IndexArgs),
    /// Looks up people by name, context, metadata or face.
    Retrieve(RetrieveArgs),
    /// Selects benchmark subjects per country and popularity tier.
    Sample(SampleArgs),
    /// Generates multiple-choice items for sampled subjects.
    Generate(GenerateArgs),
    /// Runs a benchmark against a model under one condition.
    Evaluate(EvaluateArgs),
    /// Re-aggregates stored outcomes into a report.
    Report(ReportArgs),
    /// Runs the built-in oracle checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Tables as JSONL (one table per line) or a single CSV file.
    #[arg(long)]
    pub tables: PathBuf,
    /// `name<TAB>qid` lines.
    #[arg(long)]
    pub qid_map: PathBuf,
    #[arg(long)]
    pub translations: Option<PathBuf>,
    /// `qid<TAB>views` lines.
    #[arg(long)]
    pub pageviews: Option<PathBuf>,
    /// Output directory for records.jsonl, rejections.jsonl and coverage.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub min_per_country: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Comma-separated header patterns.
    #[arg(long, value_delimiter = ',')]
    pub patterns: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub db: PathBuf,
    /// Biography embedding sidecar to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub db: PathBuf,
    /// Biography embedding sidecar.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Face embedding sidecar for the store.
    #[arg(long)]
    pub face_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub context: Option<String>,
    #[arg(long)]
    pub nationality: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub birth_year: Option<i32>,
    /// Query face vector: comma- or whitespace-separated floats.
    #[arg(long)]
    pub face_embedding_file: Option<PathBuf>,
    /// Semantic candidates to retrieve.
    #[arg(long)]
    pub k: Option<usize>,
    /// Popularity weight in [0, 1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Print a JSON array instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub db: PathBuf,
    /// `country,proportion` CSV.
    #[arg(long)]
    pub population: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub date_weight: Option<f64>,
    #[arg(long)]
    pub min_per_country: Option<usize>,
    /// Manifest JSONL to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Benchmark JSONL to write.
    #[arg(long)]
    pub out: PathBuf,
    /// LLM service URL, or `stub` for the offline generator.
    #[arg(long, env = "LLM_ENDPOINT")]
    pub llm_endpoint: Option<String>,
    /// Levels whose items reference the subject image (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub image_levels: Option<Vec<String>>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub retries: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub bench: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Model service URL, or `stub:<reply>` for a constant-reply model.
    #[arg(long, env = "MODEL_ENDPOINT")]
    pub model_endpoint: Option<String>,
    /// Label recorded in outcomes (defaults to the endpoint).
    #[arg(long)]
    pub model_id: Option<String>,
    #[arg(long)]
    pub rag: bool,
    #[arg(long)]
    pub image: bool,
    /// `en` or `org`.
    #[arg(long, default_value = "en")]
    pub variant: String,
    /// Person JSONL, needed with --rag.
    #[arg(long)]
    pub db: Option<PathBuf>,
    /// Biography embedding sidecar, needed with --rag.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Few-shot exemplars JSONL.
    #[arg(long)]
    pub fewshot: Option<PathBuf>,
    /// Report CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Outcome JSONL to write (default: next to --out).
    #[arg(long)]
    pub outcomes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Outcome JSONL files, pooled.
    #[arg(long, required = true, num_args = 1..)]
    pub outcomes: Vec<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Report CSV to write; without it the CSV goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Skip the end-to-end pipeline check.
    #[arg(long)]
    pub skip_e2e: bool,
}

/// A command failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn invalid(e: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_INVALID, error: e.into() }
    }

    pub fn io(e: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_FAILURE, error: e.into() }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Self::io(e)
    }
}

impl From<EmbedError> for Failure {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Transport(_) | EmbedError::BadResponse(_) => Self::io(e),
            _ => Self::invalid(e),
        }
    }
}

impl From<LlmError> for Failure {
    fn from(e: LlmError) -> Self {
        Self::io(e)
    }
}

impl From<RetrievalError> for Failure {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Embed(inner) => inner.into(),
            other => Self::invalid(other),
        }
    }
}

impl From<SamplerError> for Failure {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Io(inner) => inner.into(),
            SamplerError::Embed(inner) => inner.into(),
            other => Self::invalid(other),
        }
    }
}

impl From<GenError> for Failure {
    fn from(e: GenError) -> Self {
        match e {
            GenError::Llm { .. } => Self::io(e),
            other => Self::invalid(other),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(inner) => inner.into(),
            EvalError::Io(inner) => inner.into(),
            EvalError::Retrieval(inner) => inner.into(),
            other => Self::invalid(other),
        }
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        Self::invalid(e)
    }
}

impl From<IndexError> for Failure {
    fn from(e: IndexError) -> Self {
        Self::invalid(e)
    }
}

pub(crate) trait Ctx<T> {
    fn ctx(self, msg: impl Display + Send + Sync + 'static) -> Result<T, Failure>;
}

impl<T, E: Into<Failure>> Ctx<T> for Result<T, E> {
    fn ctx(self, msg: impl Display + Send + Sync + 'static) -> Result<T, Failure> {
        self.map_err(|e| {
            let f = e.into();
            Failure { code: f.code, error: f.error.context(msg) }
        })
    }
}

/// Where a command writes data (`out`) and diagnostics (`err`).
pub struct Streams<'a> {
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

/// Parses `argv` (program name first), runs the command, returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let (mut out, mut err) = (io::stdout().lock(), io::stderr());
    run_with(argv, &mut Streams { out: &mut out, err: &mut err })
}

/// [`run`] with explicit output streams.
pub fn run_with<I, T>(argv: I, st: &mut Streams<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let (code, sink) = if e.use_stderr() { (EXIT_INVALID, &mut st.err) } else { (EXIT_OK, &mut st.out) };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    let code = match commands::dispatch(cli, st) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(st.err, "error: {:#}", f.error);
            f.code
        }
    };
    let _ = st.out.flush();
    code
}
