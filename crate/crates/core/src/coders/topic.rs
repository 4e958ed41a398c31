//! Topic modeling + LLM labeling.
//!
//! Messages are embedded and grouped with the same agglomerative engine the
//! merging step uses. Each topic is described to the model by its most
//! distinguishing terms and a few exemplar messages, and the model answers
//! with one label. Term weights are class-based: a term's frequency in the
//! topic divided by its frequency across all topics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{
    build_topic_prompt, complete_parsed, empty_run, finish, parse_label_line, Approach, CoderError,
    CoderRun, ParseFailure, PromptContext,
};
use crate::clustering::{cluster_vectors, Linkage};
use crate::codebook::RawAssignment;
use crate::corpus::Corpus;
use crate::gateway::{cosine, Gateway};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicParams {
    /// Clusters smaller than this go to the outlier bucket and are not coded.
    pub min_topic_size: usize,
    /// Topics with more messages than this are flagged `needs_review`.
    pub oversized_threshold: usize,
    pub distance_threshold: f64,
    pub linkage: Linkage,
    pub keywords: usize,
    pub exemplars: usize,
}

impl Default for TopicParams {
    fn default() -> Self {
        TopicParams {
            min_topic_size: 4,
            oversized_threshold: 30,
            distance_threshold: 0.8,
            linkage: Linkage::Average,
            keywords: 10,
            exemplars: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub id: String,
    pub message_ids: Vec<String>,
    pub keywords: Vec<String>,
    pub exemplar_ids: Vec<String>,
    pub label: Option<String>,
    pub needs_review: bool,
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "can", "do", "for", "from", "has",
    "have", "i", "if", "in", "is", "it", "its", "it's", "me", "my", "no", "not", "of", "on", "or",
    "so", "that", "the", "their", "then", "there", "this", "to", "too", "was", "we", "were",
    "will", "with", "you", "your", "also", "just", "some", "very", "what", "which",
];

/// Lowercased alphanumeric words of two or more characters, minus stopwords.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() >= 2 && !STOPWORDS.contains(w))
        .map(str::to_string)
        .collect()
}

/// Per-topic terms ranked by `tf(term, topic) / tf(term, all topics)`,
/// then by in-topic frequency, then alphabetically.
pub fn class_term_weights(topic_docs: &[Vec<&str>]) -> Vec<Vec<(String, f64)>> {
    let per_topic: Vec<BTreeMap<String, usize>> = topic_docs
        .iter()
        .map(|docs| {
            let mut tf = BTreeMap::new();
            for d in docs {
                for t in tokenize(d) {
                    *tf.entry(t).or_insert(0) += 1;
                }
            }
            tf
        })
        .collect();
    let mut all: HashMap<&str, usize> = HashMap::new();
    for tf in &per_topic {
        for (t, c) in tf {
            *all.entry(t.as_str()).or_insert(0) += c;
        }
    }
    per_topic
        .iter()
        .map(|tf| {
            let mut w: Vec<(String, f64, usize)> = tf
                .iter()
                .map(|(t, &c)| (t.clone(), c as f64 / all[t.as_str()] as f64, c))
                .collect();
            w.sort_by(|a, b| {
                b.1.total_cmp(&a.1)
                    .then(b.2.cmp(&a.2))
                    .then_with(|| a.0.cmp(&b.0))
            });
            w.into_iter().map(|(t, s, _)| (t, s)).collect()
        })
        .collect()
}

pub fn run_topic_coder(
    corpus: &Corpus,
    params: &TopicParams,
    ctx: &PromptContext,
    gateway: &Gateway,
    coder_id: &str,
) -> Result<CoderRun, CoderError> {
    let n = corpus.messages.len();
    if n < 2 {
        return Err(CoderError::TooFewMessages(n));
    }
    let texts: Vec<String> = corpus.messages.iter().map(|m| m.text.clone()).collect();
    let vectors = gateway.embed(&texts)?;
    let clusters: Vec<Vec<usize>> =
        cluster_vectors(&vectors, params.linkage, params.distance_threshold)
            .into_iter()
            .filter(|c| c.len() >= params.min_topic_size.max(1))
            .collect();
    if clusters.is_empty() {
        return Ok(empty_run(coder_id, Approach::TopicModel));
    }

    let docs: Vec<Vec<&str>> = clusters
        .iter()
        .map(|c| c.iter().map(|&i| corpus.messages[i].text.as_str()).collect())
        .collect();
    let weights = class_term_weights(&docs);
    let mut topics = Vec::with_capacity(clusters.len());
    let mut requests = Vec::with_capacity(clusters.len());
    for (k, members) in clusters.iter().enumerate() {
        let dim = vectors[members[0]].len();
        let mut centroid = vec![0f32; dim];
        for &i in members {
            for (c, x) in centroid.iter_mut().zip(&vectors[i]) {
                *c += x;
            }
        }
        let mut ranked: Vec<(usize, f64)> = members
            .iter()
            .map(|&i| (i, cosine(&vectors[i], &centroid)))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let exemplars: Vec<&crate::corpus::Message> = ranked
            .iter()
            .take(params.exemplars)
            .map(|(i, _)| &corpus.messages[*i])
            .collect();
        let keywords: Vec<String> = weights[k]
            .iter()
            .take(params.keywords)
            .map(|(t, _)| t.clone())
            .collect();
        let id = format!("t{k:03}");
        requests.push(build_topic_prompt(&id, &keywords, &exemplars, ctx));
        topics.push(Topic {
            id,
            message_ids: members.iter().map(|&i| corpus.messages[i].id.clone()).collect(),
            keywords,
            exemplar_ids: exemplars.iter().map(|m| m.id.clone()).collect(),
            label: None,
            needs_review: members.len() > params.oversized_threshold,
        });
    }

    let mut failed = Vec::new();
    let labels = complete_parsed(gateway, &requests, parse_label_line, &mut failed)?;
    let mut assignments = Vec::new();
    for (topic, label) in topics.iter_mut().zip(labels) {
        if let Some(label) = label {
            topic.label = Some(label.clone());
            assignments.push(RawAssignment {
                label,
                definition: None,
                message_ids: topic.message_ids.clone(),
                parent_label: None,
                is_theme: false,
                needs_review: topic.needs_review,
            });
        }
    }
    let failures = failed
        .into_iter()
        .map(|(i, output)| ParseFailure {
            unit_id: topics[i].id.clone(),
            output,
        })
        .collect();
    Ok(CoderRun {
        codebook: finish(assignments, coder_id, Approach::TopicModel, corpus, ctx, gateway)?,
        failures,
        topics,
    })
}
