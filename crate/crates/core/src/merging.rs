//! Cross-codebook merging.
//!
//! Every code is embedded from `label: definition` and the pool is clustered
//! agglomeratively on cosine distance. A cluster with one code passes that
//! code through; a larger cluster gets a label and definition written by the
//! model from its children. A codebook algorithmically covers a merged code
//! when one of its codes ended up in the cluster.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{cluster_vectors, Linkage};
use crate::codebook::{embedding_text, normalize_label, Code, Codebook};
use crate::coders::EXPERT_ROLE;
use crate::corpus::Corpus;
use crate::gateway::{cosine, Gateway, GatewayError, PromptRequest, DEFAULT_CHAT_MODEL};

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("distance threshold {0} is outside (0, 2)")]
    BadThreshold(f64),
    #[error("no codebooks to merge")]
    NoCodebooks,
    #[error("duplicate coder id {0:?}")]
    DuplicateCoder(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("merged file {path}: {reason}")]
    File { path: String, reason: String },
}

fn default_threshold() -> f64 {
    0.35
}

fn default_label_model() -> String {
    DEFAULT_CHAT_MODEL.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeParams {
    #[serde(default = "default_threshold")]
    pub distance_threshold: f64,
    #[serde(default)]
    pub linkage: Linkage,
    /// Re-embed generated labels and keep clustering until nothing merges.
    #[serde(default)]
    pub reembed_merged: bool,
    #[serde(default = "default_label_model")]
    pub label_model: String,
    #[serde(default)]
    pub label_temperature: f64,
}

impl Default for MergeParams {
    fn default() -> Self {
        MergeParams {
            distance_threshold: default_threshold(),
            linkage: Linkage::Average,
            reembed_merged: false,
            label_model: default_label_model(),
            label_temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChildRef {
    pub coder_id: String,
    pub code_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedCode {
    pub id: String,
    pub label: String,
    pub definition: String,
    pub children: Vec<ChildRef>,
    /// One entry per codebook in the merge.
    pub algorithmic_coverage: BTreeMap<String, bool>,
}

impl MergedCode {
    pub fn embedding_text(&self) -> String {
        embedding_text(&self.label, &self.definition)
    }

    pub fn has_child(&self, coder_id: &str, code_id: &str) -> bool {
        self.children
            .iter()
            .any(|c| c.coder_id == coder_id && c.code_id == code_id)
    }
}

/// The merged output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeOutput {
    pub params: MergeParams,
    pub embed_model: String,
    pub coder_ids: Vec<String>,
    pub merged: Vec<MergedCode>,
}

impl MergeOutput {
    pub fn merged_code(&self, id: &str) -> Option<&MergedCode> {
        self.merged.iter().find(|m| m.id == id)
    }

    pub fn load(path: &Path) -> Result<MergeOutput, MergeError> {
        let err = |reason: String| MergeError::File {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::from)?;
        text.push('\n');
        std::fs::write(path, text)
    }
}

#[derive(Debug, Deserialize)]
struct LabelReply {
    label: String,
    #[serde(default)]
    definition: String,
}

fn parse_label_reply(text: &str) -> Option<(String, String)> {
    for (pos, _) in text.match_indices('{') {
        let mut s = serde_json::Deserializer::from_str(&text[pos..]).into_iter::<LabelReply>();
        if let Some(Ok(r)) = s.next() {
            let label = r.label.trim();
            if !label.is_empty() {
                return Some((label.to_string(), r.definition.trim().to_string()));
            }
        }
    }
    None
}

struct Pool<'a> {
    codes: Vec<(&'a str, &'a Code)>,
}

impl Pool<'_> {
    fn child(&self, i: usize) -> ChildRef {
        ChildRef {
            coder_id: self.codes[i].0.to_string(),
            code_id: self.codes[i].1.id.clone(),
        }
    }
}

/// Writes the label for one multi-child cluster.
fn label_request(
    pool: &Pool<'_>,
    members: &[usize],
    vectors: &[Vec<f32>],
    corpus: Option<&Corpus>,
    params: &MergeParams,
) -> PromptRequest {
    // children nearest the cluster centroid first
    let dim = vectors[members[0]].len();
    let mut centroid = vec![0f32; dim];
    for &i in members {
        for (c, x) in centroid.iter_mut().zip(&vectors[i]) {
            *c += x;
        }
    }
    let mut order: Vec<(usize, f64)> = members
        .iter()
        .map(|&i| (i, cosine(&vectors[i], &centroid)))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut user = String::from(
        "The following qualitative codes from different coders were grouped as \
         possibly the same idea. Write one label and a one-sentence definition \
         that covers them.\n\n",
    );
    for (i, _) in &order {
        let code = pool.codes[*i].1;
        user.push_str(&format!("- {}: {}\n", code.label, code.definition));
        let example = code
            .example_message_ids
            .first()
            .and_then(|id| corpus.and_then(|c| c.message(id)));
        if let Some(m) = example {
            user.push_str(&format!("  example: [{}] {}\n", m.author, m.text));
        }
    }
    user.push_str("\nReply with a JSON object {\"label\": ..., \"definition\": ...}.");
    let mut system = EXPERT_ROLE.to_string();
    if let Some(rq) = corpus.and_then(Corpus::research_question) {
        system.push_str(&format!("\nResearch question: {rq}"));
    }
    let first = pool.child(members[0]);
    PromptRequest::new(
        &params.label_model,
        params.label_temperature,
        system,
        user,
        format!("merge:{}", first.code_id),
    )
}

fn label_clusters(
    gateway: &Gateway,
    pool: &Pool<'_>,
    clusters: &[Vec<usize>],
    vectors: &[Vec<f32>],
    corpus: Option<&Corpus>,
    params: &MergeParams,
) -> Result<Vec<(String, String)>, GatewayError> {
    let multi: Vec<usize> = (0..clusters.len()).filter(|&k| clusters[k].len() > 1).collect();
    let requests: Vec<PromptRequest> = multi
        .iter()
        .map(|&k| label_request(pool, &clusters[k], vectors, corpus, params))
        .collect();
    let mut out: Vec<(String, String)> = clusters
        .iter()
        .map(|c| {
            let code = pool.codes[c[0]].1;
            (code.label.clone(), code.definition.clone())
        })
        .collect();
    for (k, reply) in multi.iter().zip(gateway.complete_many(&requests)) {
        let text = reply?.output_text;
        match parse_label_reply(&text) {
            Some(l) => out[*k] = l,
            None => log::warn!(
                "unparseable merge label for {}; keeping {:?}",
                requests[multi.iter().position(|m| m == k).unwrap()].tag,
                out[*k].0
            ),
        }
    }
    Ok(out)
}

/// Merges every code of `codebooks` into [`MergedCode`]s, ordered by their
/// first child in input order.
pub fn hierarchical_merge(
    codebooks: &[Codebook],
    params: &MergeParams,
    gateway: &Gateway,
    corpus: Option<&Corpus>,
) -> Result<Vec<MergedCode>, MergeError> {
    if codebooks.is_empty() {
        return Err(MergeError::NoCodebooks);
    }
    let t = params.distance_threshold;
    if !(t > 0.0 && t < 2.0) {
        return Err(MergeError::BadThreshold(t));
    }
    let mut seen = std::collections::BTreeSet::new();
    for cb in codebooks {
        if !seen.insert(cb.coder_id.as_str()) {
            return Err(MergeError::DuplicateCoder(cb.coder_id.clone()));
        }
    }
    let pool = Pool {
        codes: codebooks
            .iter()
            .flat_map(|cb| cb.codes.iter().map(move |c| (cb.coder_id.as_str(), c)))
            .collect(),
    };
    let texts: Vec<String> = pool.codes.iter().map(|(_, c)| c.embedding_text()).collect();
    let vectors = gateway.embed(&texts)?;
    let mut clusters = cluster_vectors(&vectors, params.linkage, t);
    let mut labels = label_clusters(gateway, &pool, &clusters, &vectors, corpus, params)?;

    while params.reembed_merged && clusters.len() > 1 {
        let texts: Vec<String> = labels.iter().map(|(l, d)| embedding_text(l, d)).collect();
        let merged_vecs = gateway.embed(&texts)?;
        let groups = cluster_vectors(&merged_vecs, params.linkage, t);
        if groups.len() == clusters.len() {
            break;
        }
        let mut next_clusters = Vec::with_capacity(groups.len());
        let mut kept = Vec::with_capacity(groups.len());
        for g in &groups {
            let mut members: Vec<usize> = g.iter().flat_map(|&k| clusters[k].clone()).collect();
            members.sort_unstable();
            next_clusters.push(members);
            kept.push((g.len() == 1).then(|| labels[g[0]].clone()));
        }
        let relabeled: Vec<Vec<usize>> = next_clusters
            .iter()
            .zip(&kept)
            .filter(|(_, k)| k.is_none())
            .map(|(c, _)| c.clone())
            .collect();
        let mut fresh = label_clusters(gateway, &pool, &relabeled, &vectors, corpus, params)?
            .into_iter();
        labels = kept
            .into_iter()
            .map(|k| k.unwrap_or_else(|| fresh.next().expect("one label per merged group")))
            .collect();
        clusters = next_clusters;
    }

    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by_key(|&k| clusters[k][0]);
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(n, k)| {
            let children: Vec<ChildRef> = clusters[k].iter().map(|&i| pool.child(i)).collect();
            let algorithmic_coverage = codebooks
                .iter()
                .map(|cb| {
                    let hit = children.iter().any(|c| c.coder_id == cb.coder_id);
                    (cb.coder_id.clone(), hit)
                })
                .collect();
            let (label, definition) = labels[k].clone();
            MergedCode {
                id: format!("m{:04}", n + 1),
                label,
                definition,
                children,
                algorithmic_coverage,
            }
        })
        .collect())
}

/// Runs [`hierarchical_merge`] and packages the result as a merged file.
pub fn merge_output(
    codebooks: &[Codebook],
    params: &MergeParams,
    gateway: &Gateway,
    corpus: Option<&Corpus>,
) -> Result<MergeOutput, MergeError> {
    Ok(MergeOutput {
        params: params.clone(),
        embed_model: gateway.embed_model_id(),
        coder_ids: codebooks.iter().map(|c| c.coder_id.clone()).collect(),
        merged: hierarchical_merge(codebooks, params, gateway, corpus)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub code: Code,
    pub similarity: f64,
    pub is_child: bool,
}

/// Ranks `codebook`'s codes by similarity to `merged`. Codes already merged
/// into it come first; within each part, higher cosine first and then
/// normalized label order.
pub fn suggest_near_codes(
    merged: &MergedCode,
    codebook: &Codebook,
    k: usize,
    gateway: &Gateway,
) -> Result<Vec<Suggestion>, GatewayError> {
    let mut texts = vec![merged.embedding_text()];
    texts.extend(codebook.codes.iter().map(Code::embedding_text));
    let v = gateway.embed(&texts)?;
    let mut keyed: Vec<(String, Suggestion)> = codebook
        .codes
        .iter()
        .zip(&v[1..])
        .map(|(c, e)| {
            let s = Suggestion {
                code: c.clone(),
                similarity: if *e == v[0] { 1.0 } else { cosine(&v[0], e) },
                is_child: merged.has_child(&codebook.coder_id, &c.id),
            };
            (normalize_label(&c.label), s)
        })
        .collect();
    keyed.sort_by(|(la, a), (lb, b)| {
        b.is_child
            .cmp(&a.is_child)
            .then(b.similarity.total_cmp(&a.similarity))
            .then_with(|| la.cmp(lb))
    });
    let mut out: Vec<Suggestion> = keyed.into_iter().map(|(_, s)| s).collect();
    out.truncate(k);
    Ok(out)
}
