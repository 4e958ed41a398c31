//! Codes and codebooks shared by every coder and the merging engine.
//!
//! Human codebooks use the same file format machine coders emit, so both
//! are interchangeable downstream.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coders::{Approach, PromptContext};
use crate::corpus::Corpus;
use crate::gateway::{Gateway, GatewayError, PromptRequest};

#[derive(Debug, Error)]
pub enum CodebookError {
    #[error("definition generation failed: {0}")]
    Gateway(#[from] GatewayError),
    #[error("codebook file {path}: {reason}")]
    File { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoderKind {
    Human,
    Machine,
}

/// Lowercased, whitespace-collapsed label.
pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// A code-to-message link as emitted by a coder, before deduplication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAssignment {
    pub label: String,
    #[serde(default)]
    pub definition: Option<String>,
    pub message_ids: Vec<String>,
    #[serde(default)]
    pub parent_label: Option<String>,
    #[serde(default)]
    pub is_theme: bool,
    #[serde(default)]
    pub needs_review: bool,
}

impl RawAssignment {
    pub fn new(label: &str, message_ids: &[&str]) -> Self {
        RawAssignment {
            label: label.to_string(),
            definition: None,
            message_ids: message_ids.iter().map(|s| s.to_string()).collect(),
            parent_label: None,
            is_theme: false,
            needs_review: false,
        }
    }

    pub fn with_definition(mut self, d: &str) -> Self {
        self.definition = Some(d.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Code {
    #[serde(default)]
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub normalized_label: String,
    #[serde(default)]
    pub definition: String,
    #[serde(rename = "examples")]
    pub example_message_ids: Vec<String>,
    #[serde(default)]
    pub coder_id: String,
    #[serde(default)]
    pub is_theme: bool,
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_approach: Option<Approach>,
    /// Set for oversized topics that an analyst should inspect.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub needs_review: bool,
}

impl Code {
    /// Text embedded for similarity: `label: definition`, or the label twice
    /// when there is no definition.
    pub fn embedding_text(&self) -> String {
        embedding_text(&self.label, &self.definition)
    }
}

pub fn embedding_text(label: &str, definition: &str) -> String {
    if definition.trim().is_empty() {
        format!("{label}: {label}")
    } else {
        format!("{label}: {definition}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub coder_id: String,
    pub kind: CoderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approach: Option<Approach>,
    pub codes: Vec<Code>,
}

impl Codebook {
    pub fn code(&self, id: &str) -> Option<&Code> {
        self.codes.iter().find(|c| c.id == id)
    }

    /// Codes back into assignments, preserving order.
    pub fn to_assignments(&self) -> Vec<RawAssignment> {
        self.codes
            .iter()
            .map(|c| RawAssignment {
                label: c.label.clone(),
                definition: (!c.definition.is_empty()).then(|| c.definition.clone()),
                message_ids: c.example_message_ids.clone(),
                parent_label: c.parent.clone(),
                is_theme: c.is_theme,
                needs_review: c.needs_review,
            })
            .collect()
    }

    pub fn load(path: &Path) -> Result<Codebook, CodebookError> {
        let err = |reason: String| CodebookError::File {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let raw: Codebook = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if raw.coder_id.trim().is_empty() {
            return Err(err("empty coder_id".into()));
        }
        if let Some(c) = raw.codes.iter().find(|c| c.example_message_ids.is_empty()) {
            return Err(err(format!("code {:?} has no examples", c.label)));
        }
        let mut cb = finalize(&raw.to_assignments(), &raw.coder_id, raw.kind, raw.approach);
        for c in &mut cb.codes {
            if c.source_approach.is_none() {
                c.source_approach = raw.approach;
            }
        }
        Ok(cb)
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

/// Deduplicates assignments into a codebook.
///
/// Assignments whose normalized labels match become one code whose example
/// set is the union, in first-seen order. Ids are `{coder_id}/{n}` in order
/// of first appearance, so re-finalizing a codebook reproduces it.
pub fn finalize(
    assignments: &[RawAssignment],
    coder_id: &str,
    kind: CoderKind,
    approach: Option<Approach>,
) -> Codebook {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut codes: Vec<Code> = Vec::new();
    for a in assignments {
        let normalized = normalize_label(&a.label);
        if normalized.is_empty() || a.message_ids.is_empty() {
            continue;
        }
        let slot = *index.entry(normalized.clone()).or_insert_with(|| {
            codes.push(Code {
                id: String::new(),
                label: a.label.split_whitespace().collect::<Vec<_>>().join(" "),
                normalized_label: normalized.clone(),
                definition: String::new(),
                example_message_ids: Vec::new(),
                coder_id: coder_id.to_string(),
                is_theme: false,
                parent: None,
                source_approach: approach,
                needs_review: false,
            });
            codes.len() - 1
        });
        let code = &mut codes[slot];
        for m in &a.message_ids {
            if !code.example_message_ids.contains(m) {
                code.example_message_ids.push(m.clone());
            }
        }
        if code.definition.is_empty() {
            if let Some(d) = a.definition.as_deref().map(str::trim).filter(|d| !d.is_empty()) {
                code.definition = d.to_string();
            }
        }
        if code.parent.is_none() {
            code.parent = a.parent_label.clone().filter(|p| !p.trim().is_empty());
        }
        code.is_theme |= a.is_theme;
        code.needs_review |= a.needs_review;
    }
    for (i, c) in codes.iter_mut().enumerate() {
        c.id = format!("{coder_id}/{:04}", i + 1);
    }
    Codebook {
        coder_id: coder_id.to_string(),
        kind,
        approach,
        codes,
    }
}

/// Fills missing definitions with one completion per code.
pub struct DefinitionWriter<'a> {
    pub gateway: &'a Gateway,
    pub corpus: &'a Corpus,
    pub context: &'a PromptContext,
}

impl DefinitionWriter<'_> {
    pub fn request(&self, coder_id: &str, code: &Code) -> PromptRequest {
        let mut examples = String::new();
        for id in code.example_message_ids.iter().take(3) {
            if let Some(m) = self.corpus.message(id) {
                examples.push_str(&format!("- {}: {}\n", m.author, m.text));
            }
        }
        let user = format!(
            "Write a one-sentence definition for the qualitative code \"{}\".\n\
             Example messages coded with it:\n{examples}\
             Reply with the definition sentence only.",
            code.label
        );
        self.context.request(
            self.context.system_text(),
            user,
            format!("define:{coder_id}:{}", code.normalized_label),
        )
    }

    pub fn fill(&self, codebook: &mut Codebook) -> Result<usize, CodebookError> {
        let pending: Vec<usize> = codebook
            .codes
            .iter()
            .enumerate()
            .filter(|(_, c)| c.definition.trim().is_empty())
            .map(|(i, _)| i)
            .collect();
        let requests: Vec<PromptRequest> = pending
            .iter()
            .map(|&i| self.request(&codebook.coder_id, &codebook.codes[i]))
            .collect();
        let results = self.gateway.complete_many(&requests);
        for (i, r) in pending.iter().zip(results) {
            codebook.codes[*i].definition = r?.output_text.trim().to_string();
        }
        Ok(pending.len())
    }
}

/// Example-set union per normalized label; used to check that
/// deduplication never drops a message reference.
pub fn examples_by_label(assignments: &[RawAssignment]) -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for a in assignments {
        let key = normalize_label(&a.label);
        if key.is_empty() {
            continue;
        }
        let e = out.entry(key).or_default();
        for m in &a.message_ids {
            if !e.contains(m) {
                e.push(m.clone());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalizes_and_unions_examples() {
        let cb = finalize(
            &[
                RawAssignment::new("Future Update", &["m1"]),
                RawAssignment::new("  future   update ", &["m7"]),
            ],
            "human-1",
            CoderKind::Human,
            None,
        );
        assert_eq!(cb.codes.len(), 1);
        assert_eq!(cb.codes[0].label, "Future Update");
        assert_eq!(cb.codes[0].normalized_label, "future update");
        assert_eq!(cb.codes[0].example_message_ids, ["m1", "m7"]);
        assert_eq!(cb.codes[0].id, "human-1/0001");
    }

    #[test]
    fn three_hundred_forty_distinct_codes_survive() {
        let a: Vec<RawAssignment> = (0..340)
            .map(|i| RawAssignment::new(&format!("code {i}"), &["m1"]))
            .collect();
        let cb = finalize(&a, "humans", CoderKind::Human, None);
        assert_eq!(cb.codes.len(), 340);
    }

    #[test]
    fn blank_labels_are_dropped() {
        let cb = finalize(
            &[RawAssignment::new("   ", &["m1"]), RawAssignment::new("x", &["m1"])],
            "c",
            CoderKind::Machine,
            None,
        );
        assert_eq!(cb.codes.len(), 1);
    }

    #[test]
    fn embedding_text_uses_label_twice_without_definition() {
        assert_eq!(embedding_text("a", ""), "a: a");
        assert_eq!(embedding_text("a", "def"), "a: def");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cb = finalize(
            &[RawAssignment::new("x", &["m1"]).with_definition("d")],
            "verb",
            CoderKind::Machine,
            Some(Approach::ItemVerb),
        );
        let p = dir.path().join("cb.json");
        cb.save(&p).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(v["codes"][0]["examples"], serde_json::json!(["m1"]));
        assert_eq!(v["kind"], "machine");
        assert_eq!(Codebook::load(&p).unwrap(), cb);
    }

    fn assignment() -> impl Strategy<Value = RawAssignment> {
        (
            prop::sample::select(vec!["Plan", "plan", " PLAN ", "ask help", "Ask  Help", "thanks", ""]),
            prop::collection::vec(prop::sample::select(vec!["m1", "m2", "m3", "m4"]), 1..3),
            prop::option::of(prop::sample::select(vec!["d1", "d2"])),
        )
            .prop_map(|(l, ms, d)| RawAssignment {
                label: l.to_string(),
                definition: d.map(str::to_string),
                message_ids: ms.into_iter().map(str::to_string).collect(),
                parent_label: None,
                is_theme: false,
                needs_review: false,
            })
    }

    proptest! {
        #[test]
        fn finalize_is_idempotent(a in prop::collection::vec(assignment(), 0..12)) {
            let once = finalize(&a, "c", CoderKind::Machine, None);
            let twice = finalize(&once.to_assignments(), "c", CoderKind::Machine, None);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn no_message_reference_is_lost(a in prop::collection::vec(assignment(), 0..12)) {
            let cb = finalize(&a, "c", CoderKind::Machine, None);
            let expected = examples_by_label(&a);
            prop_assert_eq!(cb.codes.len(), expected.len());
            for c in &cb.codes {
                prop_assert_eq!(&c.example_message_ids, &expected[&c.normalized_label]);
            }
        }
    }
}
