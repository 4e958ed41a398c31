//! OpenAI-compatible chat and embedding endpoints.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{ChatProvider, EmbeddingProvider, PromptRequest, ProviderError, ProviderReply};

pub const ENV_API_KEY: &str = "LLM_API_KEY";
pub const ENV_BASE_URL: &str = "LLM_BASE_URL";
pub const ENV_EMBED_MODEL: &str = "EMBED_MODEL_ID";
pub const ENV_CHAT_MODEL: &str = "CHAT_MODEL_ID";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn from_env() -> Option<Self> {
        let base_url = std::env::var(ENV_BASE_URL).ok()?;
        Some(HttpConfig {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: std::env::var(ENV_API_KEY).ok(),
            timeout: Duration::from_secs(120),
        })
    }
}

fn client(cfg: &HttpConfig) -> Result<reqwest::blocking::Client, ProviderError> {
    reqwest::blocking::Client::builder()
        .timeout(cfg.timeout)
        .build()
        .map_err(|e| ProviderError::fatal(None, e.to_string()))
}

fn post(
    cfg: &HttpConfig,
    path: &str,
    body: serde_json::Value,
) -> Result<serde_json::Value, ProviderError> {
    let mut req = client(cfg)?
        .post(format!("{}/{}", cfg.base_url, path))
        .json(&body);
    if let Some(key) = &cfg.api_key {
        req = req.bearer_auth(key);
    }
    let resp = req
        .send()
        .map_err(|e| ProviderError::retryable(None, e.to_string()))?;
    let status = resp.status();
    let text = resp
        .text()
        .map_err(|e| ProviderError::retryable(Some(status.as_u16()), e.to_string()))?;
    if !status.is_success() {
        let code = status.as_u16();
        let detail: String = text.chars().take(500).collect();
        return Err(if code == 429 || status.is_server_error() {
            ProviderError::retryable(Some(code), detail)
        } else {
            ProviderError::fatal(Some(code), detail)
        });
    }
    serde_json::from_str(&text)
        .map_err(|e| ProviderError::fatal(Some(status.as_u16()), format!("bad json: {e}")))
}

pub struct HttpChatProvider {
    cfg: HttpConfig,
}

impl HttpChatProvider {
    pub fn new(cfg: HttpConfig) -> Self {
        HttpChatProvider { cfg }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    model: Option<String>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

impl ChatProvider for HttpChatProvider {
    fn complete(&self, req: &PromptRequest) -> Result<ProviderReply, ProviderError> {
        let body = json!({
            "model": req.model_id,
            "temperature": req.temperature,
            "messages": [
                {"role": "system", "content": req.system_text},
                {"role": "user", "content": req.user_text},
            ],
        });
        let value = post(&self.cfg, "chat/completions", body)?;
        let parsed: ChatResponse = serde_json::from_value(value)
            .map_err(|e| ProviderError::fatal(None, format!("unexpected response: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::fatal(None, "no choices".into()))?;
        let mut meta = BTreeMap::new();
        if let Some(m) = parsed.model {
            meta.insert("model".into(), m);
        }
        if let Some(f) = choice.finish_reason {
            meta.insert("finish_reason".into(), f);
        }
        Ok(ProviderReply {
            text: choice.message.content.unwrap_or_default(),
            meta,
        })
    }
}

pub struct HttpEmbeddingProvider {
    cfg: HttpConfig,
    model: String,
}

impl HttpEmbeddingProvider {
    pub fn new(cfg: HttpConfig, model: impl Into<String>) -> Self {
        HttpEmbeddingProvider {
            cfg,
            model: model.into(),
        }
    }
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    index: usize,
    embedding: Vec<f32>,
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let value = post(
            &self.cfg,
            "embeddings",
            json!({"model": self.model, "input": texts}),
        )?;
        let mut parsed: EmbedResponse = serde_json::from_value(value)
            .map_err(|e| ProviderError::fatal(None, format!("unexpected response: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(ProviderError::fatal(
                None,
                format!("{} embeddings for {} inputs", parsed.data.len(), texts.len()),
            ));
        }
        parsed.data.sort_by_key(|d| d.index);
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }
}
