//! Command-line pipeline: `ingest → chunk → code → merge → review → report`.
//!
//! Every command works inside a project directory (`--project`, default
//! `.`) laid out as the review server expects, and writes a manifest under
//! `manifests/` holding its parameters and the SHA-256 of every file it
//! read or wrote. Manifests carry no timestamps, so rerunning a replayed
//! pipeline reproduces them byte for byte.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::clustering::Linkage;
use crate::codebook::Codebook;
use crate::coders::{run_coder, Approach, PromptContext, TopicParams};
use crate::corpus::{ingest_corpus, read_corpus, read_records, segment_chunks, write_records, SegmentParams};
use crate::gateway::{
    ChatProvider, EmbeddingProvider, Gateway, HttpChatProvider, HttpConfig, HttpEmbeddingProvider,
    Mode, ScriptedProvider, StubEmbedder, Transcript, DEFAULT_CHAT_MODEL, DEFAULT_TEMPERATURE,
    ENV_CHAT_MODEL, ENV_EMBED_MODEL, TRANSCRIPT_FILE,
};
use crate::merging::{merge_output, MergeParams};
use crate::review::{
    serve, AppState, PipelineDefaults, Project, ProjectConfig, SessionSpec, CODEBOOK_DIR,
    CORPUS_FILE, JOURNAL_FILE, MERGED_FILE, PROJECT_FILE,
};

pub const MANIFEST_DIR: &str = "manifests";
pub const RUNS_DIR: &str = "runs";
pub const REPORT_DIR: &str = "reports";

#[derive(Debug, Parser)]
#[command(name = "opencoding", version, about = "Open coding of chat logs with LLM coders")]
pub struct Cli {
    /// Project directory holding corpus, codebooks, merge and review journal.
    #[arg(long, short = 'C', global = true, default_value = ".")]
    pub project: PathBuf,
    /// JSON file of pipeline defaults; overrides `defaults` in project.json.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a raw JSONL export and store it as the project corpus.
    Ingest {
        input: PathBuf,
        #[arg(long)]
        research_question: Option<String>,
        #[arg(long)]
        context: Option<String>,
        /// Project name used by the review server.
        #[arg(long)]
        name: Option<String>,
    },
    /// Split the corpus into conversation chunks at long pauses.
    Chunk {
        #[arg(long)]
        min_gap: Option<i64>,
        #[arg(long)]
        prominence_factor: Option<f64>,
    },
    /// Run one coding approach and write its codebooks.
    Code {
        #[arg(long)]
        approach: String,
        #[arg(long)]
        verb_phrases: bool,
        #[arg(long)]
        structured: bool,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long, default_value_t = 1)]
        runs: u32,
        #[command(flatten)]
        topic: TopicArgs,
        #[command(flatten)]
        gateway: GatewayArgs,
    },
    /// Cluster every codebook's codes into merged codes.
    Merge {
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        linkage: Option<String>,
        #[arg(long)]
        reembed_merged: bool,
        #[command(flatten)]
        gateway: GatewayArgs,
    },
    /// Review sessions and the HTTP API.
    Review {
        #[command(subcommand)]
        command: ReviewCommand,
    },
    /// Render Table 2, 4 or 5 from the review journal.
    Report {
        #[arg(long)]
        table: u8,
        #[arg(long)]
        session: Option<String>,
    },
    /// Code the corpus for every model × temperature × run.
    Matrix {
        /// Approaches to run; defaults to all five.
        #[arg(long, value_delimiter = ',')]
        approaches: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        temperatures: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        runs: u32,
        #[command(flatten)]
        topic: TopicArgs,
        #[command(flatten)]
        gateway: GatewayArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReviewCommand {
    /// Serve the review API for this project.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Sample merged codes into a new review session.
    Init {
        #[arg(long)]
        sample: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_delimiter = ',', required = true)]
        reviewers: Vec<String>,
        /// Comma-separated 1-based ranges, e.g. `1-20,21-40,41-81`.
        #[arg(long)]
        rounds: Option<String>,
        #[arg(long)]
        id: Option<String>,
        /// Show algorithmic coverage from the start.
        #[arg(long)]
        open: bool,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct TopicArgs {
    #[arg(long)]
    pub min_topic_size: Option<usize>,
    #[arg(long)]
    pub topic_threshold: Option<f64>,
    #[arg(long)]
    pub oversized_threshold: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Stub,
    Remote,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GatewayArgs {
    /// Serve completions only from DIR/transcript.jsonl.
    #[arg(long, value_name = "DIR", conflicts_with = "record")]
    pub replay: Option<PathBuf>,
    /// Record completions to DIR/transcript.jsonl.
    #[arg(long, value_name = "DIR")]
    pub record: Option<PathBuf>,
    /// Answer prompts from a scripted JSON file instead of a remote model.
    #[arg(long, value_name = "FILE", conflicts_with = "replay")]
    pub scripted: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = EmbedderKind::Stub)]
    pub embedder: EmbedderKind,
}

/// A failed command, printed as one JSON line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &str, message: impl std::fmt::Display) -> Self {
        CliError {
            kind: kind.to_string(),
            message: message.to_string().replace('\n', " "),
        }
    }

    pub fn to_line(&self) -> String {
        json!({ "error": self.kind, "message": self.message }).to_string()
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

macro_rules! cli_from {
    ($($t:ty => $kind:expr),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::new($kind, e)
            }
        })*
    };
}

cli_from! {
    std::io::Error => "io",
    serde_json::Error => "json",
    crate::corpus::CorpusError => "corpus",
    crate::codebook::CodebookError => "codebook",
}

impl From<crate::gateway::GatewayError> for CliError {
    fn from(e: crate::gateway::GatewayError) -> Self {
        CliError::new(e.kind(), e)
    }
}

impl From<crate::coders::CoderError> for CliError {
    fn from(e: crate::coders::CoderError) -> Self {
        match e {
            crate::coders::CoderError::Gateway(g) => g.into(),
            e => CliError::new("coder", e),
        }
    }
}

impl From<crate::merging::MergeError> for CliError {
    fn from(e: crate::merging::MergeError) -> Self {
        match e {
            crate::merging::MergeError::Gateway(g) => g.into(),
            e => CliError::new("merge", e),
        }
    }
}

impl From<crate::review::ReviewError> for CliError {
    fn from(e: crate::review::ReviewError) -> Self {
        CliError::new(e.kind(), e)
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Help and usage errors come back as clap errors so the caller can print
/// them with clap's own formatting and exit code.
pub fn run_from<I, T>(args: I) -> Result<Result<(), CliError>, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    Ok(run(&cli))
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let root = &cli.project;
    let mut config = ProjectConfig::load(root)?;
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))?;
        let over: PipelineDefaults = serde_json::from_str(&text)
            .map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))?;
        config.defaults = overlay(config.defaults, over);
    }
    match &cli.command {
        Command::Ingest {
            input,
            research_question,
            context,
            name,
        } => ingest(root, config, input, research_question, context, name),
        Command::Chunk {
            min_gap,
            prominence_factor,
        } => chunk(root, &config, *min_gap, *prominence_factor),
        Command::Code {
            approach,
            verb_phrases,
            structured,
            model,
            temperature,
            runs,
            topic,
            gateway,
        } => {
            let approach = Approach::resolve(approach, *structured, *verb_phrases)
                .map_err(|e| CliError::new("usage", e))?;
            let model = model
                .clone()
                .or_else(|| config.defaults.model.clone())
                .or_else(|| std::env::var(ENV_CHAT_MODEL).ok())
                .unwrap_or_else(|| DEFAULT_CHAT_MODEL.to_string());
            let temperature = temperature
                .or(config.defaults.temperature)
                .unwrap_or(DEFAULT_TEMPERATURE);
            code_grid(root, &config, &[approach], &[model], &[temperature], *runs, topic, gateway, None)
        }
        Command::Merge {
            threshold,
            linkage,
            reembed_merged,
            gateway,
        } => merge(root, &config, *threshold, linkage.as_deref(), *reembed_merged, gateway),
        Command::Review { command } => match command {
            ReviewCommand::Serve { port, host } => review_serve(root, &config, host, *port),
            ReviewCommand::Init {
                sample,
                seed,
                reviewers,
                rounds,
                id,
                open,
            } => {
                let rounds = rounds.as_deref().map(parse_rounds).transpose()?;
                let spec = SessionSpec {
                    id: id.clone(),
                    sample_size: *sample,
                    seed: *seed,
                    blind: !open,
                    reviewers: reviewers.clone(),
                    rounds,
                    coder_ids: None,
                };
                review_init(root, &spec)
            }
        },
        Command::Report { table, session } => report(root, *table, session.as_deref()),
        Command::Matrix {
            approaches,
            models,
            temperatures,
            runs,
            topic,
            gateway,
        } => {
            let approaches = if approaches.is_empty() {
                Approach::ALL.to_vec()
            } else {
                approaches
                    .iter()
                    .map(|a| a.parse::<Approach>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| CliError::new("usage", e))?
            };
            if models.is_empty() || temperatures.is_empty() || *runs == 0 {
                return Err(CliError::new(
                    "usage",
                    "matrix needs at least one model, one temperature and one run",
                ));
            }
            code_grid(
                root,
                &config,
                &approaches,
                models,
                temperatures,
                *runs,
                topic,
                gateway,
                Some("matrix"),
            )
        }
    }
}

fn overlay(base: PipelineDefaults, over: PipelineDefaults) -> PipelineDefaults {
    PipelineDefaults {
        min_gap: over.min_gap.or(base.min_gap),
        prominence_factor: over.prominence_factor.or(base.prominence_factor),
        model: over.model.or(base.model),
        temperature: over.temperature.or(base.temperature),
        distance_threshold: over.distance_threshold.or(base.distance_threshold),
        linkage: over.linkage.or(base.linkage),
        topic_threshold: over.topic_threshold.or(base.topic_threshold),
        min_topic_size: over.min_topic_size.or(base.min_topic_size),
        oversized_threshold: over.oversized_threshold.or(base.oversized_threshold),
    }
}

/// `1-20,21-40` → `[(1, 20), (21, 40)]`.
pub fn parse_rounds(s: &str) -> Result<Vec<(usize, usize)>, CliError> {
    s.split(',')
        .map(|part| {
            let (a, b) = part.trim().split_once('-').unwrap_or((part.trim(), part.trim()));
            match (a.trim().parse(), b.trim().parse()) {
                (Ok(a), Ok(b)) => Ok((a, b)),
                _ => Err(CliError::new("usage", format!("bad round range {part:?}"))),
            }
        })
        .collect()
}

/// Output codebook name for one cell of a run grid.
pub fn coder_id(approach: Approach, model: &str, temperature: f64, run: u32) -> String {
    format!("{approach}_{model}_{temperature}_{run}")
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptRef {
    pub path: String,
    pub mode: Mode,
    pub sha256: String,
}

/// Provenance record for one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub params: Value,
    /// Project-relative path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transcript: Option<TranscriptRef>,
}

impl Manifest {
    fn new(command: &str, params: Value) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            params,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            transcript: None,
        }
    }

    fn digest_into(map: &mut BTreeMap<String, String>, root: &Path, rel: &str) -> Result<(), CliError> {
        let sum = sha256_file(&root.join(rel))
            .map_err(|e| CliError::new("io", format!("{rel}: {e}")))?;
        map.insert(rel.to_string(), sum);
        Ok(())
    }

    fn input(&mut self, root: &Path, rel: &str) -> Result<(), CliError> {
        Self::digest_into(&mut self.inputs, root, rel)
    }

    fn output(&mut self, root: &Path, rel: &str) -> Result<(), CliError> {
        Self::digest_into(&mut self.outputs, root, rel)
    }

    /// Writes `manifests/{name}.json` and returns its path.
    fn write(&self, root: &Path, name: &str) -> Result<PathBuf, CliError> {
        let dir = root.join(MANIFEST_DIR);
        fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{name}.json"));
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

fn codebook_rels(root: &Path) -> Result<Vec<String>, CliError> {
    let mut out: Vec<String> = match fs::read_dir(root.join(CODEBOOK_DIR)) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| n.ends_with(".json"))
            .map(|n| format!("{CODEBOOK_DIR}/{n}"))
            .collect(),
        Err(_) => Vec::new(),
    };
    out.sort();
    Ok(out)
}

fn load_corpus(root: &Path, config: &ProjectConfig) -> Result<crate::corpus::Corpus, CliError> {
    let path = root.join(CORPUS_FILE);
    let f = fs::File::open(&path).map_err(|e| {
        CliError::new("missing_input", format!("{}: {e} (run ingest first)", path.display()))
    })?;
    let mut corpus = read_corpus(BufReader::new(f))?;
    corpus.metadata = config.metadata.clone();
    Ok(corpus)
}

fn ingest(
    root: &Path,
    mut config: ProjectConfig,
    input: &Path,
    research_question: &Option<String>,
    context: &Option<String>,
    name: &Option<String>,
) -> Result<(), CliError> {
    let f = fs::File::open(input)
        .map_err(|e| CliError::new("missing_input", format!("{}: {e}", input.display())))?;
    let records = read_records(BufReader::new(f))?;
    let corpus = ingest_corpus(&records)?;
    fs::create_dir_all(root)?;
    let mut w = BufWriter::new(fs::File::create(root.join(CORPUS_FILE))?);
    write_records(&corpus, &mut w)?;
    std::io::Write::flush(&mut w)?;
    drop(w);
    if let Some(q) = research_question {
        config.metadata.insert("research_question".into(), q.clone());
    }
    if let Some(c) = context {
        config.metadata.insert("context".into(), c.clone());
    }
    if let Some(n) = name {
        config.name = n.clone();
    }
    config.save(root)?;

    let mut m = Manifest::new(
        "ingest",
        json!({
            "input": input.display().to_string(),
            "records": records.len(),
            "messages": corpus.messages.len(),
        }),
    );
    m.inputs.insert(input.display().to_string(), sha256_file(input)?);
    m.output(root, CORPUS_FILE)?;
    m.output(root, PROJECT_FILE)?;
    m.write(root, "ingest")?;
    println!("ingested {} messages into {}", corpus.messages.len(), root.join(CORPUS_FILE).display());
    Ok(())
}

fn chunk(
    root: &Path,
    config: &ProjectConfig,
    min_gap: Option<i64>,
    prominence_factor: Option<f64>,
) -> Result<(), CliError> {
    let corpus = load_corpus(root, config)?;
    let d = SegmentParams::default();
    let params = SegmentParams {
        min_gap: min_gap.or(config.defaults.min_gap).unwrap_or(d.min_gap),
        prominence_factor: prominence_factor
            .or(config.defaults.prominence_factor)
            .unwrap_or(d.prominence_factor),
    };
    let mut m = Manifest::new("chunk", serde_json::to_value(params)?);
    m.input(root, CORPUS_FILE)?;
    let corpus = segment_chunks(corpus, &params);
    let mut w = BufWriter::new(fs::File::create(root.join(CORPUS_FILE))?);
    write_records(&corpus, &mut w)?;
    std::io::Write::flush(&mut w)?;
    drop(w);
    m.output(root, CORPUS_FILE)?;
    m.write(root, "chunk")?;
    println!("{} chunks", corpus.chunks.len());
    Ok(())
}

/// Builds the gateway described by the flags.
fn open_gateway(args: &GatewayArgs) -> Result<Gateway, CliError> {
    let embedder: Arc<dyn EmbeddingProvider> = match args.embedder {
        EmbedderKind::Stub => Arc::new(StubEmbedder::default()),
        EmbedderKind::Remote => {
            let cfg = HttpConfig::from_env()
                .ok_or_else(|| CliError::new("config", "remote embedder needs LLM_BASE_URL"))?;
            let model = std::env::var(ENV_EMBED_MODEL)
                .map_err(|_| CliError::new("config", "remote embedder needs EMBED_MODEL_ID"))?;
            Arc::new(HttpEmbeddingProvider::new(cfg, model))
        }
    };
    let chat: Option<Arc<dyn ChatProvider>> = match &args.scripted {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::new("missing_input", format!("{}: {e}", path.display())))?;
            let script: ScriptedProvider = serde_json::from_str(&text)
                .map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))?;
            Some(Arc::new(script))
        }
        None if args.replay.is_some() => None,
        None => HttpConfig::from_env().map(|c| Arc::new(HttpChatProvider::new(c)) as Arc<dyn ChatProvider>),
    };
    let transcript = match (&args.replay, &args.record) {
        (Some(dir), _) => Transcript::open(dir, Mode::Replay)?,
        (None, Some(dir)) => {
            fs::create_dir_all(dir)?;
            Transcript::open(dir, Mode::Record)?
        }
        (None, None) => Transcript::live(),
    };
    Ok(Gateway::new(transcript, chat, embedder))
}

/// Flushes the gateway and describes its transcript for a manifest.
fn finish_gateway(gateway: &Gateway, args: &GatewayArgs) -> Result<Option<TranscriptRef>, CliError> {
    gateway.flush()?;
    let (dir, mode) = match (&args.replay, &args.record) {
        (Some(d), _) => (d, Mode::Replay),
        (None, Some(d)) => (d, Mode::Record),
        (None, None) => return Ok(None),
    };
    let file = if dir.is_dir() { dir.join(TRANSCRIPT_FILE) } else { dir.clone() };
    let sha256 = if file.exists() {
        sha256_file(&file)?
    } else {
        hex::encode(Sha256::digest(b""))
    };
    Ok(Some(TranscriptRef {
        path: dir.display().to_string(),
        mode,
        sha256,
    }))
}

fn gateway_params(args: &GatewayArgs) -> Value {
    json!({
        "embedder": args.embedder,
        "scripted": args.scripted.as_ref().map(|p| p.display().to_string()),
    })
}

fn topic_params(args: &TopicArgs, d: &PipelineDefaults) -> TopicParams {
    let base = TopicParams::default();
    TopicParams {
        min_topic_size: args.min_topic_size.or(d.min_topic_size).unwrap_or(base.min_topic_size),
        oversized_threshold: args
            .oversized_threshold
            .or(d.oversized_threshold)
            .unwrap_or(base.oversized_threshold),
        distance_threshold: args
            .topic_threshold
            .or(d.topic_threshold)
            .unwrap_or(base.distance_threshold),
        ..base
    }
}

#[allow(clippy::too_many_arguments)]
fn code_grid(
    root: &Path,
    config: &ProjectConfig,
    approaches: &[Approach],
    models: &[String],
    temperatures: &[f64],
    runs: u32,
    topic: &TopicArgs,
    gw_args: &GatewayArgs,
    matrix: Option<&str>,
) -> Result<(), CliError> {
    if runs == 0 {
        return Err(CliError::new("usage", "--runs must be at least 1"));
    }
    let corpus = load_corpus(root, config)?;
    let base_ctx = PromptContext::from_metadata(&corpus.metadata)?;
    let topic = topic_params(topic, &config.defaults);
    let gateway = open_gateway(gw_args)?;
    fs::create_dir_all(root.join(CODEBOOK_DIR))?;
    fs::create_dir_all(root.join(RUNS_DIR))?;

    let mut written = Vec::new();
    for &approach in approaches {
        for model in models {
            for &temperature in temperatures {
                for run in 1..=runs {
                    let id = coder_id(approach, model, temperature, run);
                    let ctx = base_ctx.clone().with_model(model, temperature, run - 1);
                    let result = run_coder(approach, &corpus, &ctx, &gateway, &id, &topic);
                    // keep whatever was recorded even when a later unit fails
                    gateway.flush()?;
                    let out = result?;
                    let cb_rel = format!("{CODEBOOK_DIR}/{id}.json");
                    let run_rel = format!("{RUNS_DIR}/{id}.json");
                    out.codebook.save(&root.join(&cb_rel))?;
                    let mut text = serde_json::to_string_pretty(&out)?;
                    text.push('\n');
                    fs::write(root.join(&run_rel), text)?;
                    if !out.failures.is_empty() {
                        log::warn!("{id}: {} unparseable unit(s)", out.failures.len());
                    }
                    println!("{id}: {} codes", out.codebook.codes.len());
                    written.push((id, approach, model.clone(), temperature, run, cb_rel, run_rel));
                }
            }
        }
    }
    let transcript = finish_gateway(&gateway, gw_args)?;
    let mut grid = Manifest::new(
        "matrix",
        json!({
            "approaches": approaches,
            "models": models,
            "temperatures": temperatures,
            "runs": runs,
            "topic": topic,
            "gateway": gateway_params(gw_args),
        }),
    );
    grid.input(root, CORPUS_FILE)?;
    grid.transcript = transcript.clone();
    for (id, approach, model, temperature, run, cb_rel, run_rel) in written {
        let mut m = Manifest::new(
            "code",
            json!({
                "coder_id": id,
                "approach": approach,
                "model": model,
                "temperature": temperature,
                "run": run,
                "repetition": run - 1,
                "research_question": base_ctx.research_question,
                "context": base_ctx.context,
                "topic": (approach == Approach::TopicModel).then(|| topic.clone()),
                "gateway": gateway_params(gw_args),
            }),
        );
        m.input(root, CORPUS_FILE)?;
        m.output(root, &cb_rel)?;
        m.output(root, &run_rel)?;
        m.transcript = transcript.clone();
        m.write(root, &format!("code-{id}"))?;
        grid.output(root, &cb_rel)?;
    }
    if let Some(name) = matrix {
        grid.write(root, name)?;
    }
    Ok(())
}

fn merge(
    root: &Path,
    config: &ProjectConfig,
    threshold: Option<f64>,
    linkage: Option<&str>,
    reembed_merged: bool,
    gw_args: &GatewayArgs,
) -> Result<(), CliError> {
    let linkage: Linkage = match linkage {
        Some(l) => l.parse().map_err(|e: String| CliError::new("usage", e))?,
        None => config.defaults.linkage.unwrap_or_default(),
    };
    let params = MergeParams {
        distance_threshold: threshold
            .or(config.defaults.distance_threshold)
            .unwrap_or(MergeParams::default().distance_threshold),
        linkage,
        reembed_merged,
        label_model: config
            .defaults
            .model
            .clone()
            .unwrap_or_else(|| DEFAULT_CHAT_MODEL.to_string()),
        ..MergeParams::default()
    };
    let rels = codebook_rels(root)?;
    let codebooks = rels
        .iter()
        .map(|r| Codebook::load(&root.join(r)))
        .collect::<Result<Vec<_>, _>>()?;
    let corpus = if root.join(CORPUS_FILE).exists() {
        Some(load_corpus(root, config)?)
    } else {
        None
    };
    let gateway = open_gateway(gw_args)?;
    let result = merge_output(&codebooks, &params, &gateway, corpus.as_ref());
    gateway.flush()?;
    let out = result?;
    out.save(&root.join(MERGED_FILE))?;

    let mut m = Manifest::new(
        "merge",
        json!({ "merge": params, "gateway": gateway_params(gw_args) }),
    );
    for r in &rels {
        m.input(root, r)?;
    }
    if corpus.is_some() {
        m.input(root, CORPUS_FILE)?;
    }
    m.output(root, MERGED_FILE)?;
    m.transcript = finish_gateway(&gateway, gw_args)?;
    m.write(root, "merge")?;
    println!("{} codes from {} codebooks → {} merged codes",
        codebooks.iter().map(|c| c.codes.len()).sum::<usize>(),
        codebooks.len(),
        out.merged.len());
    Ok(())
}

/// Opens the project for review; suggestions use the stub embedder.
fn open_project(root: &Path) -> Result<Project, CliError> {
    if !root.join(MERGED_FILE).exists() {
        return Err(CliError::new(
            "missing_input",
            format!("{} not found (run merge first)", root.join(MERGED_FILE).display()),
        ));
    }
    let gateway = Gateway::replay(Transcript::in_memory(Mode::Replay, []));
    Ok(Project::open(root, gateway)?)
}

fn project_inputs(root: &Path, m: &mut Manifest) -> Result<(), CliError> {
    for rel in [PROJECT_FILE, CORPUS_FILE, MERGED_FILE, JOURNAL_FILE] {
        if root.join(rel).exists() {
            m.input(root, rel)?;
        }
    }
    for r in codebook_rels(root)? {
        m.input(root, &r)?;
    }
    Ok(())
}

fn review_init(root: &Path, spec: &SessionSpec) -> Result<(), CliError> {
    let mut project = open_project(root)?;
    let session = project.create_session(spec)?;
    let mut m = Manifest::new("review init", serde_json::to_value(spec)?);
    project_inputs(root, &mut m)?;
    m.inputs.remove(JOURNAL_FILE);
    m.output(root, JOURNAL_FILE)?;
    m.write(root, &format!("review-init-{}", session.id))?;
    println!("session {} with {} merged codes", session.id, session.merged_code_ids.len());
    Ok(())
}

fn review_serve(root: &Path, config: &ProjectConfig, host: &str, port: u16) -> Result<(), CliError> {
    let project = open_project(root)?;
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| CliError::new("usage", format!("bad address {host}:{port}: {e}")))?;
    let mut m = Manifest::new("review serve", json!({ "host": host, "port": port }));
    project_inputs(root, &mut m)?;
    m.write(root, "review-serve")?;
    let name = if config.name.is_empty() {
        root.canonicalize()
            .ok()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "project".into())
    } else {
        config.name.clone()
    };
    println!("serving project {name:?} on http://{addr}/projects/{name}");
    let state = AppState::new([(name, project)]);
    tokio::runtime::Runtime::new()?
        .block_on(serve(state, addr))
        .map_err(|e| CliError::new("io", e))
}

fn report(root: &Path, table: u8, session: Option<&str>) -> Result<(), CliError> {
    let project = open_project(root)?;
    let r = project.report(table, session)?;
    fs::create_dir_all(root.join(REPORT_DIR))?;
    let txt_rel = format!("{REPORT_DIR}/table{table}.txt");
    let json_rel = format!("{REPORT_DIR}/table{table}.json");
    fs::write(root.join(&txt_rel), &r.text)?;
    let mut text = serde_json::to_string_pretty(&r)?;
    text.push('\n');
    fs::write(root.join(&json_rel), text)?;

    let mut m = Manifest::new("report", json!({ "table": table, "session": session }));
    project_inputs(root, &mut m)?;
    m.output(root, &txt_rel)?;
    m.output(root, &json_rel)?;
    m.write(root, &format!("report-table{table}"))?;
    print!("{}", r.text);
    if r.pending > 0 {
        println!("({} sampled item(s) not yet resolved)", r.pending);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coder_ids_follow_the_grid_naming() {
        assert_eq!(
            coder_id(Approach::ItemVerb, "gpt-4o-0513", 0.5, 3),
            "item_verb_gpt-4o-0513_0.5_3"
        );
        assert_eq!(coder_id(Approach::TopicModel, "m", 1.0, 1), "topic_model_m_1_1");
    }

    #[test]
    fn round_ranges_parse() {
        assert_eq!(parse_rounds("1-20,21-40, 41-81").unwrap(), vec![(1, 20), (21, 40), (41, 81)]);
        assert_eq!(parse_rounds("3").unwrap(), vec![(3, 3)]);
        assert!(parse_rounds("1-x").is_err());
    }

    #[test]
    fn errors_are_one_json_line() {
        let e = CliError::new("corpus", "bad\nrecord");
        let line = e.to_line();
        assert!(!line.contains('\n'));
        let v: Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["error"], "corpus");
        assert_eq!(v["message"], "bad record");
    }

    #[test]
    fn unknown_subcommand_is_a_usage_error() {
        let e = run_from(["opencoding", "frobnicate"]).unwrap_err();
        assert_eq!(e.kind(), clap::error::ErrorKind::InvalidSubcommand);
        assert!(e.render().to_string().contains("Usage"));
    }

    #[test]
    fn config_overlay_prefers_the_override() {
        let base = PipelineDefaults {
            min_gap: Some(100),
            model: Some("a".into()),
            ..Default::default()
        };
        let over = PipelineDefaults {
            model: Some("b".into()),
            ..Default::default()
        };
        let d = overlay(base, over);
        assert_eq!(d.min_gap, Some(100));
        assert_eq!(d.model.as_deref(), Some("b"));
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "opencoding", "-C", "p", "code", "--approach", "item", "--verb-phrases", "--model",
            "gpt-4o-0513", "--temperature", "0.5", "--runs", "5", "--replay", "fixtures/",
        ])
        .unwrap();
        match cli.command {
            Command::Code { approach, verb_phrases, runs, gateway, .. } => {
                assert_eq!(approach, "item");
                assert!(verb_phrases);
                assert_eq!(runs, 5);
                assert_eq!(gateway.replay, Some(PathBuf::from("fixtures/")));
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["opencoding", "merge", "--replay", "a", "--record", "b"]).is_err());
    }
}
