//! Uniform access to chat-completion and embedding providers.
//!
//! Every chat request is identified by a SHA-256 digest of its canonical
//! form (all fields except `tag`). The [`Gateway`] serves repeated requests
//! from an in-run cache, consults a [`Transcript`] for record/replay, and
//! retries transient provider failures with exponential backoff. Replay
//! mode never calls a provider, which is what makes test runs reproducible
//! without API keys.

mod http;
mod stub;
mod transcript;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{
    HttpChatProvider, HttpConfig, HttpEmbeddingProvider, ENV_API_KEY, ENV_BASE_URL,
    ENV_CHAT_MODEL, ENV_EMBED_MODEL,
};
pub use stub::StubEmbedder;
pub use transcript::{Mode, Transcript, TranscriptEntry, TRANSCRIPT_FILE};

pub const DEFAULT_CHAT_MODEL: &str = "gpt-4o-0513";
pub const DEFAULT_TEMPERATURE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub model_id: String,
    pub temperature: f64,
    pub system_text: String,
    pub user_text: String,
    /// Repetition index for repeated runs of the same prompt; part of the
    /// digest so that repetitions are distinct requests.
    #[serde(default)]
    pub repetition: u32,
    pub tag: String,
}

#[derive(Serialize)]
struct CanonicalRequest<'a> {
    model_id: &'a str,
    temperature: f64,
    system_text: &'a str,
    user_text: &'a str,
    repetition: u32,
}

impl PromptRequest {
    pub fn new(
        model_id: impl Into<String>,
        temperature: f64,
        system_text: impl Into<String>,
        user_text: impl Into<String>,
        tag: impl Into<String>,
    ) -> Self {
        PromptRequest {
            model_id: model_id.into(),
            temperature,
            system_text: system_text.into(),
            user_text: user_text.into(),
            repetition: 0,
            tag: tag.into(),
        }
    }

    /// Hex SHA-256 over every field except `tag`.
    pub fn digest(&self) -> String {
        let canon = CanonicalRequest {
            model_id: &self.model_id,
            temperature: self.temperature,
            system_text: &self.system_text,
            user_text: &self.user_text,
            repetition: self.repetition,
        };
        let bytes = serde_json::to_vec(&canon).expect("request serializes");
        hex::encode(Sha256::digest(bytes))
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.model_id.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty model_id".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    fn for_embedding(model: &str, text: &str) -> Self {
        PromptRequest {
            model_id: model.to_string(),
            temperature: 0.0,
            system_text: "<embedding>".into(),
            user_text: text.to_string(),
            repetition: 0,
            tag: "embed".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub request_hash: String,
    pub output_text: String,
    #[serde(default)]
    pub provider_meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderReply {
    pub text: String,
    pub meta: BTreeMap<String, String>,
}

impl From<String> for ProviderReply {
    fn from(text: String) -> Self {
        ProviderReply {
            text,
            meta: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("provider error (status {status:?}): {detail}")]
pub struct ProviderError {
    pub status: Option<u16>,
    pub detail: String,
    pub retryable: bool,
}

impl ProviderError {
    pub fn retryable(status: Option<u16>, detail: String) -> Self {
        ProviderError {
            status,
            detail,
            retryable: true,
        }
    }

    pub fn fatal(status: Option<u16>, detail: String) -> Self {
        ProviderError {
            status,
            detail,
            retryable: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("replay miss for request {hash} (tag {tag})")]
    ReplayMiss { hash: String, tag: String },
    #[error("{source} after {attempts} attempt(s)")]
    Provider {
        attempts: u32,
        #[source]
        source: ProviderError,
    },
    #[error("no chat provider configured for {0:?} mode")]
    NoProvider(Mode),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("transcript: {0}")]
    Transcript(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl GatewayError {
    /// Short machine-readable name, used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            GatewayError::ReplayMiss { .. } => "replay_miss",
            GatewayError::Provider { .. } => "provider",
            GatewayError::NoProvider(_) => "no_provider",
            GatewayError::InvalidRequest(_) => "invalid_request",
            GatewayError::DimensionMismatch { .. } => "dimension_mismatch",
            GatewayError::Transcript(_) => "transcript",
            GatewayError::Io(_) => "io",
        }
    }
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &PromptRequest) -> Result<ProviderReply, ProviderError>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn model_id(&self) -> &str;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError>;
    /// Local deterministic embedders are computed directly and never recorded.
    fn is_local(&self) -> bool {
        false
    }
}

/// Adapts a closure into a [`ChatProvider`]; handy for scripted fixtures.
pub struct FnProvider<F>(pub F);

impl<F> ChatProvider for FnProvider<F>
where
    F: Fn(&PromptRequest) -> Result<String, ProviderError> + Send + Sync,
{
    fn complete(&self, request: &PromptRequest) -> Result<ProviderReply, ProviderError> {
        (self.0)(request).map(ProviderReply::from)
    }
}

/// Answers by exact tag, then by the longest matching tag prefix, then with
/// `fallback` when set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScriptedProvider {
    pub by_tag: BTreeMap<String, String>,
    #[serde(default)]
    pub by_prefix: BTreeMap<String, String>,
    #[serde(default)]
    pub fallback: Option<String>,
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, request: &PromptRequest) -> Result<ProviderReply, ProviderError> {
        if let Some(t) = self.by_tag.get(&request.tag) {
            return Ok(t.clone().into());
        }
        let prefixed = self
            .by_prefix
            .iter()
            .filter(|(p, _)| request.tag.starts_with(p.as_str()))
            .max_by_key(|(p, _)| p.len());
        if let Some((_, t)) = prefixed {
            return Ok(t.clone().into());
        }
        self.fallback
            .clone()
            .map(ProviderReply::from)
            .ok_or_else(|| ProviderError::fatal(Some(404), format!("no script for {}", request.tag)))
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Upper bound on upstream attempts per request.
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub parallelism: usize,
    pub embed_batch_size: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            max_retries: 3,
            backoff_base: Duration::from_secs(1),
            parallelism: 4,
            embed_batch_size: 64,
        }
    }
}

type Slot = Arc<Mutex<Option<Completion>>>;

pub struct Gateway {
    chat: Option<Arc<dyn ChatProvider>>,
    embedder: Arc<dyn EmbeddingProvider>,
    transcript: Mutex<Transcript>,
    slots: Mutex<HashMap<String, Slot>>,
    embed_cache: Mutex<HashMap<String, Vec<f32>>>,
    sent: Mutex<Vec<PromptRequest>>,
    upstream_calls: AtomicUsize,
    config: GatewayConfig,
}

impl Gateway {
    pub fn new(
        transcript: Transcript,
        chat: Option<Arc<dyn ChatProvider>>,
        embedder: Arc<dyn EmbeddingProvider>,
    ) -> Self {
        Gateway {
            chat,
            embedder,
            transcript: Mutex::new(transcript),
            slots: Mutex::new(HashMap::new()),
            embed_cache: Mutex::new(HashMap::new()),
            sent: Mutex::new(Vec::new()),
            upstream_calls: AtomicUsize::new(0),
            config: GatewayConfig::default(),
        }
    }

    /// Replay-only gateway with the stub embedder.
    pub fn replay(transcript: Transcript) -> Self {
        Gateway::new(transcript, None, Arc::new(StubEmbedder::default()))
    }

    pub fn with_config(mut self, config: GatewayConfig) -> Self {
        self.config = config;
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.transcript.lock().unwrap().mode
    }

    pub fn embed_model_id(&self) -> String {
        self.embedder.model_id().to_string()
    }

    /// Number of provider calls made so far, retries included.
    pub fn upstream_calls(&self) -> usize {
        self.upstream_calls.load(Ordering::SeqCst)
    }

    /// Every chat request passed to [`complete`](Self::complete), in call order.
    pub fn sent_prompts(&self) -> Vec<PromptRequest> {
        self.sent.lock().unwrap().clone()
    }

    pub fn transcript_jsonl(&self) -> String {
        self.transcript.lock().unwrap().to_jsonl()
    }

    pub fn flush(&self) -> Result<(), GatewayError> {
        self.transcript.lock().unwrap().flush()
    }

    fn call_with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, ProviderError>,
    ) -> Result<T, GatewayError> {
        let max = self.config.max_retries.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.upstream_calls.fetch_add(1, Ordering::SeqCst);
            match call() {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable && attempt < max => {
                    let wait = self.config.backoff_base * 2u32.pow(attempt - 1);
                    log::warn!("provider error ({e}); retry {attempt}/{max} in {wait:?}");
                    std::thread::sleep(wait);
                }
                Err(source) => {
                    return Err(GatewayError::Provider {
                        attempts: attempt,
                        source,
                    })
                }
            }
        }
    }

    pub fn complete(&self, request: &PromptRequest) -> Result<Completion, GatewayError> {
        request.validate()?;
        self.sent.lock().unwrap().push(request.clone());
        let hash = request.digest();
        let slot = self
            .slots
            .lock()
            .unwrap()
            .entry(hash.clone())
            .or_default()
            .clone();
        // Holding the slot lock makes concurrent identical requests wait for
        // the first one instead of calling upstream again.
        let mut slot = slot.lock().unwrap();
        if let Some(c) = slot.as_ref() {
            return Ok(c.clone());
        }
        let recorded = {
            let t = self.transcript.lock().unwrap();
            match (t.mode, t.get(&hash)) {
                (Mode::Replay | Mode::Record, Some(e)) => Some(e.output_text.clone()),
                (Mode::Replay, None) => {
                    return Err(GatewayError::ReplayMiss {
                        hash,
                        tag: request.tag.clone(),
                    })
                }
                _ => None,
            }
        };
        let completion = match recorded {
            Some(output_text) => Completion {
                request_hash: hash,
                output_text,
                provider_meta: BTreeMap::new(),
            },
            None => {
                let mode = self.mode();
                let chat = self.chat.as_ref().ok_or(GatewayError::NoProvider(mode))?;
                let reply = self.call_with_retries(|| chat.complete(request))?;
                if mode == Mode::Record {
                    self.transcript.lock().unwrap().insert(TranscriptEntry {
                        hash: hash.clone(),
                        request: request.clone(),
                        output_text: reply.text.clone(),
                    });
                }
                Completion {
                    request_hash: hash,
                    output_text: reply.text,
                    provider_meta: reply.meta,
                }
            }
        };
        *slot = Some(completion.clone());
        Ok(completion)
    }

    /// Completes a batch with up to `parallelism` requests in flight.
    /// Results line up with the input order.
    pub fn complete_many(
        &self,
        requests: &[PromptRequest],
    ) -> Vec<Result<Completion, GatewayError>> {
        let workers = self.config.parallelism.max(1).min(requests.len().max(1));
        if workers <= 1 {
            return requests.iter().map(|r| self.complete(r)).collect();
        }
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<Completion, GatewayError>>>> =
            Mutex::new((0..requests.len()).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(req) = requests.get(i) else { break };
                    let r = self.complete(req);
                    results.lock().unwrap()[i] = Some(r);
                });
            }
        });
        results
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|r| r.expect("every request processed"))
            .collect()
    }

    /// Embeds texts into L2-normalized vectors, preserving input order.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let model = self.embedder.model_id().to_string();
        let key = |t: &str| PromptRequest::for_embedding(&model, t).digest();
        let local = self.embedder.is_local();
        let mode = self.mode();
        if !local && mode != Mode::Live {
            let transcript = self.transcript.lock().unwrap();
            let mut cache = self.embed_cache.lock().unwrap();
            for t in texts {
                let k = key(t);
                if cache.contains_key(&k) {
                    continue;
                }
                if let Some(e) = transcript.get(&k) {
                    let v: Vec<f32> = serde_json::from_str(&e.output_text).map_err(|err| {
                        GatewayError::Transcript(format!("bad embedding record {k}: {err}"))
                    })?;
                    cache.insert(k, normalize(v));
                }
            }
        }
        let mut missing: Vec<&String> = Vec::new();
        {
            let cache = self.embed_cache.lock().unwrap();
            for t in texts {
                if !cache.contains_key(&key(t)) && !missing.contains(&t) {
                    missing.push(t);
                }
            }
        }
        if !local && mode == Mode::Replay {
            if let Some(t) = missing.first() {
                return Err(GatewayError::ReplayMiss {
                    hash: key(t),
                    tag: "embed".into(),
                });
            }
        }
        for batch in missing.chunks(self.config.embed_batch_size.max(1)) {
            let owned: Vec<String> = batch.iter().map(|s| s.to_string()).collect();
            let vectors = if local {
                self.embedder
                    .embed_batch(&owned)
                    .map_err(|source| GatewayError::Provider {
                        attempts: 1,
                        source,
                    })?
            } else {
                self.call_with_retries(|| self.embedder.embed_batch(&owned))?
            };
            if vectors.len() != owned.len() {
                return Err(GatewayError::Provider {
                    attempts: 1,
                    source: ProviderError::fatal(
                        None,
                        format!("{} vectors for {} texts", vectors.len(), owned.len()),
                    ),
                });
            }
            let record = !local && mode == Mode::Record;
            let mut cache = self.embed_cache.lock().unwrap();
            for (t, v) in owned.iter().zip(vectors) {
                let k = key(t);
                if record {
                    self.transcript.lock().unwrap().insert(TranscriptEntry {
                        hash: k.clone(),
                        request: PromptRequest::for_embedding(&model, t),
                        output_text: serde_json::to_string(&v).expect("vector serializes"),
                    });
                }
                cache.insert(k, normalize(v));
            }
        }
        let cache = self.embed_cache.lock().unwrap();
        let out: Vec<Vec<f32>> = texts
            .iter()
            .map(|t| cache.get(&key(t)).cloned().expect("embedding computed"))
            .collect();
        let dim = out[0].len();
        if let Some(bad) = out.iter().find(|v| v.len() != dim) {
            return Err(GatewayError::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Ok(out)
    }
}

pub fn normalize(v: Vec<f32>) -> Vec<f32> {
    let norm = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v;
    }
    v.into_iter().map(|x| (f64::from(x) / norm) as f32).collect()
}

/// Cosine similarity of two vectors, computed in f64.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}
