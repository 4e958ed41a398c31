//! The five open-coding approaches.
//!
//! Each approach is a prompt builder plus an output parser. Chunk approaches
//! send one prompt per conversation chunk; item approaches send one prompt
//! per message with the message's chunk as context; the topic approach
//! clusters message embeddings and asks for one label per topic. No prompt
//! ever carries a codebook or example codes.

mod parse;
mod prompts;
mod topic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{finalize, CodebookError, CoderKind, Codebook, DefinitionWriter, RawAssignment};
use crate::corpus::Corpus;
use crate::gateway::{Gateway, GatewayError, PromptRequest};

pub use parse::{parse_code_list, parse_label_line, IndexSpec, ParseError, ParsedCode};
pub use prompts::{
    build_prompt, build_topic_prompt, fill, render_chunk, render_message, reprompt,
    PromptContext, PromptTemplates, Unit, EXPERT_ROLE, REPROMPT_SUFFIX,
};
pub use topic::{class_term_weights, run_topic_coder, tokenize, Topic, TopicParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    TopicModel,
    ChunkLevel,
    ChunkStructured,
    ItemLevel,
    ItemVerb,
}

impl Approach {
    pub const ALL: [Approach; 5] = [
        Approach::TopicModel,
        Approach::ChunkLevel,
        Approach::ChunkStructured,
        Approach::ItemLevel,
        Approach::ItemVerb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Approach::TopicModel => "topic_model",
            Approach::ChunkLevel => "chunk_level",
            Approach::ChunkStructured => "chunk_structured",
            Approach::ItemLevel => "item_level",
            Approach::ItemVerb => "item_verb",
        }
    }

    /// Column heading used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            Approach::TopicModel => "Topic Modeling + LLM",
            Approach::ChunkLevel => "Chunk-Level",
            Approach::ChunkStructured => "Chunk-Level, Structured",
            Approach::ItemLevel => "Item-Level",
            Approach::ItemVerb => "Item-Level, Verb Phrases",
        }
    }

    /// Resolves a CLI approach name, where `--structured` and
    /// `--verb-phrases` select the variants of `chunk` and `item`.
    pub fn resolve(name: &str, structured: bool, verb_phrases: bool) -> Result<Approach, String> {
        let base: Approach = name.parse()?;
        Ok(match base {
            Approach::ChunkLevel if structured => Approach::ChunkStructured,
            Approach::ItemLevel if verb_phrases => Approach::ItemVerb,
            a => a,
        })
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Approach {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "topic_model" | "topic" => Ok(Approach::TopicModel),
            "chunk_level" | "chunk" => Ok(Approach::ChunkLevel),
            "chunk_structured" => Ok(Approach::ChunkStructured),
            "item_level" | "item" => Ok(Approach::ItemLevel),
            "item_verb" => Ok(Approach::ItemVerb),
            other => Err(format!(
                "unknown approach {other:?} (topic_model|chunk_level|chunk_structured|item_level|item_verb)"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum CoderError {
    #[error("corpus metadata lacks {0:?}")]
    MissingMetadata(String),
    #[error("corpus is not segmented into chunks")]
    NotSegmented,
    #[error("topic modeling needs at least 2 messages, got {0}")]
    TooFewMessages(usize),
    #[error("approach {0} does not code this kind of unit")]
    UnitMismatch(Approach),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
}

/// A unit whose output stayed unparseable after one reprompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub unit_id: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoderRun {
    pub codebook: Codebook,
    pub failures: Vec<ParseFailure>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub topics: Vec<Topic>,
}

/// Sends every request; outputs that fail `parse` are reprompted once.
/// Returns per-request parsed values, `None` for units that failed twice.
fn complete_parsed<T>(
    gateway: &Gateway,
    requests: &[PromptRequest],
    parse: impl Fn(&str) -> Option<T>,
    failures: &mut Vec<(usize, String)>,
) -> Result<Vec<Option<T>>, GatewayError> {
    let first = gateway.complete_many(requests);
    let mut out: Vec<Option<T>> = Vec::with_capacity(requests.len());
    let mut retry_idx = Vec::new();
    for (i, r) in first.into_iter().enumerate() {
        let c = r?;
        match parse(&c.output_text) {
            Some(v) => out.push(Some(v)),
            None => {
                out.push(None);
                retry_idx.push(i);
            }
        }
    }
    let retries: Vec<PromptRequest> = retry_idx.iter().map(|&i| reprompt(&requests[i])).collect();
    for (i, r) in retry_idx.iter().zip(gateway.complete_many(&retries)) {
        let c = r?;
        match parse(&c.output_text) {
            Some(v) => out[*i] = Some(v),
            None => {
                log::warn!("unparseable output for {} after reprompt", requests[*i].tag);
                failures.push((*i, c.output_text));
            }
        }
    }
    Ok(out)
}

fn finish(
    assignments: Vec<RawAssignment>,
    coder_id: &str,
    approach: Approach,
    corpus: &Corpus,
    ctx: &PromptContext,
    gateway: &Gateway,
) -> Result<Codebook, CoderError> {
    let mut cb = finalize(&assignments, coder_id, CoderKind::Machine, Some(approach));
    DefinitionWriter {
        gateway,
        corpus,
        context: ctx,
    }
    .fill(&mut cb)?;
    Ok(cb)
}

/// Chunk-level coding, optionally structured into themes and codes.
///
/// A code attaches to the messages it names by `message_index` (1-based
/// within the chunk) and otherwise to the whole chunk. In structured mode
/// every code keeps its `parent` theme, and each theme is also emitted as a
/// code flagged `is_theme` over the union of its children's messages.
pub fn run_chunk_coder(
    corpus: &Corpus,
    structured: bool,
    ctx: &PromptContext,
    gateway: &Gateway,
    coder_id: &str,
) -> Result<CoderRun, CoderError> {
    let approach = if structured {
        Approach::ChunkStructured
    } else {
        Approach::ChunkLevel
    };
    if corpus.messages.is_empty() {
        return Ok(empty_run(coder_id, approach));
    }
    if !corpus.is_segmented() {
        return Err(CoderError::NotSegmented);
    }
    let requests = corpus
        .chunks
        .iter()
        .map(|c| build_prompt(approach, Unit::Chunk(c), corpus, ctx))
        .collect::<Result<Vec<_>, _>>()?;
    let mut failed = Vec::new();
    let parsed = complete_parsed(gateway, &requests, |t| parse_code_list(t).ok(), &mut failed)?;

    let mut assignments = Vec::new();
    for (chunk, codes) in corpus.chunks.iter().zip(parsed) {
        let mut themes: Vec<RawAssignment> = Vec::new();
        for code in codes.unwrap_or_default() {
            let picked: Vec<String> = code
                .message_index
                .as_ref()
                .map(IndexSpec::indices)
                .unwrap_or_default()
                .into_iter()
                .filter_map(|i| usize::try_from(i - 1).ok())
                .filter_map(|i| chunk.message_ids.get(i).cloned())
                .collect();
            let message_ids = if picked.is_empty() {
                chunk.message_ids.clone()
            } else {
                picked
            };
            let parent = structured
                .then(|| code.parent.clone())
                .flatten()
                .map(|p| p.trim().to_string())
                .filter(|p| !p.is_empty());
            if let Some(p) = &parent {
                match themes.iter_mut().find(|t| t.label == *p) {
                    Some(t) => {
                        for m in &message_ids {
                            if !t.message_ids.contains(m) {
                                t.message_ids.push(m.clone());
                            }
                        }
                    }
                    None => themes.push(RawAssignment {
                        label: p.clone(),
                        definition: None,
                        message_ids: message_ids.clone(),
                        parent_label: None,
                        is_theme: true,
                        needs_review: false,
                    }),
                }
            }
            assignments.push(RawAssignment {
                label: code.label,
                definition: code.definition,
                message_ids,
                parent_label: parent,
                is_theme: false,
                needs_review: false,
            });
        }
        assignments.extend(themes);
    }
    let failures = failed
        .into_iter()
        .map(|(i, output)| ParseFailure {
            unit_id: corpus.chunks[i].id.clone(),
            output,
        })
        .collect();
    Ok(CoderRun {
        codebook: finish(assignments, coder_id, approach, corpus, ctx, gateway)?,
        failures,
        topics: Vec::new(),
    })
}

/// Line-by-line coding: one prompt per message, zero or more codes each,
/// every code linked to exactly its target message.
pub fn run_item_coder(
    corpus: &Corpus,
    verb_phrases: bool,
    ctx: &PromptContext,
    gateway: &Gateway,
    coder_id: &str,
) -> Result<CoderRun, CoderError> {
    let approach = if verb_phrases {
        Approach::ItemVerb
    } else {
        Approach::ItemLevel
    };
    if corpus.messages.is_empty() {
        return Ok(empty_run(coder_id, approach));
    }
    if !corpus.is_segmented() {
        return Err(CoderError::NotSegmented);
    }
    let requests = corpus
        .messages
        .iter()
        .map(|m| build_prompt(approach, Unit::Message(m), corpus, ctx))
        .collect::<Result<Vec<_>, _>>()?;
    let mut failed = Vec::new();
    let parsed = complete_parsed(gateway, &requests, |t| parse_code_list(t).ok(), &mut failed)?;
    let mut assignments = Vec::new();
    for (m, codes) in corpus.messages.iter().zip(parsed) {
        for code in codes.unwrap_or_default() {
            assignments.push(RawAssignment {
                label: code.label,
                definition: code.definition,
                message_ids: vec![m.id.clone()],
                parent_label: None,
                is_theme: false,
                needs_review: false,
            });
        }
    }
    let failures = failed
        .into_iter()
        .map(|(i, output)| ParseFailure {
            unit_id: corpus.messages[i].id.clone(),
            output,
        })
        .collect();
    Ok(CoderRun {
        codebook: finish(assignments, coder_id, approach, corpus, ctx, gateway)?,
        failures,
        topics: Vec::new(),
    })
}

fn empty_run(coder_id: &str, approach: Approach) -> CoderRun {
    CoderRun {
        codebook: finalize(&[], coder_id, CoderKind::Machine, Some(approach)),
        failures: Vec::new(),
        topics: Vec::new(),
    }
}

/// Runs one approach with default topic parameters.
pub fn run_coder(
    approach: Approach,
    corpus: &Corpus,
    ctx: &PromptContext,
    gateway: &Gateway,
    coder_id: &str,
    topic_params: &TopicParams,
) -> Result<CoderRun, CoderError> {
    match approach {
        Approach::TopicModel => run_topic_coder(corpus, topic_params, ctx, gateway, coder_id),
        Approach::ChunkLevel => run_chunk_coder(corpus, false, ctx, gateway, coder_id),
        Approach::ChunkStructured => run_chunk_coder(corpus, true, ctx, gateway, coder_id),
        Approach::ItemLevel => run_item_coder(corpus, false, ctx, gateway, coder_id),
        Approach::ItemVerb => run_item_coder(corpus, true, ctx, gateway, coder_id),
    }
}


#[cfg(test)]
mod tests;
