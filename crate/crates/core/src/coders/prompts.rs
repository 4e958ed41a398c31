use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Approach, CoderError};
use crate::corpus::{Chunk, Corpus, Message};
use crate::gateway::{PromptRequest, DEFAULT_CHAT_MODEL, DEFAULT_TEMPERATURE};

const SYSTEM: &str = include_str!("../../templates/system.txt");
const TOPIC_MODEL: &str = include_str!("../../templates/topic_model.txt");
const CHUNK_LEVEL: &str = include_str!("../../templates/chunk_level.txt");
const CHUNK_STRUCTURED: &str = include_str!("../../templates/chunk_structured.txt");
const ITEM_LEVEL: &str = include_str!("../../templates/item_level.txt");
const ITEM_VERB: &str = include_str!("../../templates/item_verb.txt");

pub const EXPERT_ROLE: &str =
    "You are an expert in thematic analysis with grounded theory, working on open coding.";

pub const REPROMPT_SUFFIX: &str = "\n\nYour previous reply could not be parsed. \
Reply again with only the JSON list described above and nothing else.";

/// Editable prompt templates with `{research_question}`, `{context}`,
/// `{chunk}`, `{message}` and `{keywords}` placeholders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub system: String,
    pub user: BTreeMap<Approach, String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        let user = [
            (Approach::TopicModel, TOPIC_MODEL),
            (Approach::ChunkLevel, CHUNK_LEVEL),
            (Approach::ChunkStructured, CHUNK_STRUCTURED),
            (Approach::ItemLevel, ITEM_LEVEL),
            (Approach::ItemVerb, ITEM_VERB),
        ]
        .into_iter()
        .map(|(a, t)| (a, t.to_string()))
        .collect();
        PromptTemplates {
            system: SYSTEM.to_string(),
            user,
        }
    }
}

impl PromptTemplates {
    /// Defaults overridden by any `system.txt` or `{approach}.txt` in `dir`.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut t = PromptTemplates::default();
        let sys = dir.join("system.txt");
        if sys.exists() {
            t.system = std::fs::read_to_string(sys)?;
        }
        for a in Approach::ALL {
            let p = dir.join(format!("{}.txt", a.as_str()));
            if p.exists() {
                t.user.insert(a, std::fs::read_to_string(p)?);
            }
        }
        Ok(t)
    }
}

/// Single-pass placeholder substitution; substituted text is never rescanned
/// and unknown `{names}` are left as they are.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = tail.find('}').and_then(|close| {
            let name = &tail[1..close];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, v)) => {
                out.push_str(v);
                rest = &tail[close + 1..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Numbered transcript of a chunk: `n. [author] text`.
pub fn render_chunk<'a>(messages: impl IntoIterator<Item = &'a Message>) -> String {
    messages
        .into_iter()
        .enumerate()
        .map(|(i, m)| format!("{}. [{}] {}", i + 1, m.author, m.text))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_message(m: &Message) -> String {
    format!("[{}] {}", m.author, m.text)
}

/// Model settings plus study framing shared by every prompt of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext {
    pub research_question: String,
    pub context: String,
    pub model_id: String,
    pub temperature: f64,
    pub repetition: u32,
    pub templates: PromptTemplates,
}

impl PromptContext {
    /// Reads `research_question` and `context` from corpus metadata.
    pub fn from_metadata(metadata: &BTreeMap<String, String>) -> Result<Self, CoderError> {
        let get = |k: &str| {
            metadata
                .get(k)
                .filter(|v| !v.trim().is_empty())
                .cloned()
                .ok_or_else(|| CoderError::MissingMetadata(k.to_string()))
        };
        Ok(PromptContext {
            research_question: get("research_question")?,
            context: get("context")?,
            model_id: DEFAULT_CHAT_MODEL.to_string(),
            temperature: DEFAULT_TEMPERATURE,
            repetition: 0,
            templates: PromptTemplates::default(),
        })
    }

    pub fn with_model(mut self, model_id: &str, temperature: f64, repetition: u32) -> Self {
        self.model_id = model_id.to_string();
        self.temperature = temperature;
        self.repetition = repetition;
        self
    }

    pub fn system_text(&self) -> String {
        fill(
            &self.templates.system,
            &[
                ("research_question", &self.research_question),
                ("context", &self.context),
            ],
        )
    }

    pub fn request(&self, system: String, user: String, tag: String) -> PromptRequest {
        let mut r = PromptRequest::new(&self.model_id, self.temperature, system, user, tag);
        r.repetition = self.repetition;
        r
    }

    fn user_text(&self, approach: Approach, vars: &[(&str, &str)]) -> String {
        let mut all = vec![
            ("research_question", self.research_question.as_str()),
            ("context", self.context.as_str()),
        ];
        all.extend_from_slice(vars);
        fill(&self.templates.user[&approach], &all)
    }
}

/// The unit a prompt is built for.
pub enum Unit<'a> {
    Chunk(&'a Chunk),
    Message(&'a Message),
}

/// Builds the coding prompt for one chunk (chunk approaches) or one
/// message (item approaches, with the message's whole chunk as context).
pub fn build_prompt(
    approach: Approach,
    unit: Unit<'_>,
    corpus: &Corpus,
    ctx: &PromptContext,
) -> Result<PromptRequest, CoderError> {
    let system = ctx.system_text();
    let (user, unit_id) = match (approach, unit) {
        (Approach::ChunkLevel | Approach::ChunkStructured, Unit::Chunk(chunk)) => {
            let text = render_chunk(corpus.chunk_messages(chunk));
            (ctx.user_text(approach, &[("chunk", &text)]), chunk.id.clone())
        }
        (Approach::ItemLevel | Approach::ItemVerb, Unit::Message(m)) => {
            let chunk = m
                .chunk_id
                .as_deref()
                .and_then(|c| corpus.chunk(c))
                .ok_or(CoderError::NotSegmented)?;
            let chunk_text = render_chunk(corpus.chunk_messages(chunk));
            let msg = render_message(m);
            (
                ctx.user_text(approach, &[("chunk", &chunk_text), ("message", &msg)]),
                m.id.clone(),
            )
        }
        (a, _) => {
            return Err(CoderError::UnitMismatch(a));
        }
    };
    Ok(ctx.request(system, user, format!("{}:{unit_id}", approach.as_str())))
}

/// Topic-labeling prompt from keywords and exemplar messages.
pub fn build_topic_prompt(
    topic_id: &str,
    keywords: &[String],
    exemplars: &[&Message],
    ctx: &PromptContext,
) -> PromptRequest {
    let ex = exemplars
        .iter()
        .map(|m| format!("- {}", render_message(m)))
        .collect::<Vec<_>>()
        .join("\n");
    let kw = keywords.join(", ");
    let user = ctx.user_text(Approach::TopicModel, &[("keywords", &kw), ("chunk", &ex)]);
    ctx.request(
        ctx.system_text(),
        user,
        format!("{}:{topic_id}", Approach::TopicModel.as_str()),
    )
}

pub fn reprompt(original: &PromptRequest) -> PromptRequest {
    let mut r = original.clone();
    r.user_text.push_str(REPROMPT_SUFFIX);
    r.tag.push_str(":retry");
    r
}
