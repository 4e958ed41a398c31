//! A project directory and the review operations over it.
//!
//! Layout:
//!
//! ```text
//! project.json          name, optional token, coverage groups
//! corpus.jsonl          segmented corpus (optional, for message context)
//! codebooks/*.json      one file per coder
//! merged.json           merge output
//! review.journal        append-only review store
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    CoverageDecision, Dimension, Discrepancy, PairKappa, QualityLabel, ReviewError, ReviewSession,
    ReviewStore, SessionSpec,
};
use crate::codebook::{normalize_label, Codebook, CoderKind};
use crate::coders::Approach;
use crate::corpus::{read_corpus, Corpus};
use crate::gateway::Gateway;
use crate::merging::{suggest_near_codes, MergeOutput, Suggestion};
use crate::metrics::{
    table2, table4, table5, unique_coverage, ApproachCodes, CoverageGroup, CoverageMatrix,
    ReportTable, ValidationInput,
};

/// Rater name for algorithmic coverage in kappa output.
pub const ALGORITHM: &str = "algorithm";
pub const PROJECT_FILE: &str = "project.json";
pub const MERGED_FILE: &str = "merged.json";
pub const JOURNAL_FILE: &str = "review.journal";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const CODEBOOK_DIR: &str = "codebooks";

fn default_k() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectConfig {
    #[serde(default)]
    pub name: String,
    /// When set, every request must carry it in `x-project-token`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    /// Coverage groups for unique-coverage reports. Empty means all human
    /// codebooks together plus each machine codebook on its own.
    #[serde(default)]
    pub groups: Vec<CoverageGroup>,
    #[serde(default = "default_k")]
    pub suggestions_per_codebook: usize,
    /// Study framing copied into prompts (`research_question`, `context`).
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    /// Pipeline settings that override built-in defaults; CLI flags win.
    #[serde(default)]
    pub defaults: PipelineDefaults,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineDefaults {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_gap: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prominence_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linkage: Option<crate::clustering::Linkage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_topic_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oversized_threshold: Option<usize>,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            name: String::new(),
            token: None,
            groups: Vec::new(),
            suggestions_per_codebook: default_k(),
            metadata: BTreeMap::new(),
            defaults: PipelineDefaults::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageView {
    pub id: String,
    pub author: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionView {
    pub code_id: String,
    pub label: String,
    pub definition: String,
    pub similarity: f64,
    pub examples: Vec<MessageView>,
    /// Whether the merge put this code into the merged code. Withheld in
    /// blind sessions until the reviewer saves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_child: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookSuggestions {
    pub coder_id: String,
    pub codes: Vec<SuggestionView>,
}

/// One review card as served to a reviewer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub position: usize,
    pub round: usize,
    pub merged_code_id: String,
    pub label: String,
    pub definition: String,
    pub suggestions: Vec<CodebookSuggestions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithmic_coverage: Option<BTreeMap<String, bool>>,
    /// The requesting reviewer's own current decisions.
    pub decisions: Vec<CoverageDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportResponse {
    pub table: ReportTable,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    /// Sampled merged codes left out because their coverage is unresolved.
    pub pending: usize,
}

fn parsed<T: std::str::FromStr>(m: BTreeMap<String, String>) -> BTreeMap<String, T> {
    m.into_iter()
        .filter_map(|(t, v)| v.parse().ok().map(|v| (t, v)))
        .collect()
}

pub struct Project {
    pub root: Option<PathBuf>,
    pub config: ProjectConfig,
    pub corpus: Option<Corpus>,
    pub codebooks: Vec<Codebook>,
    pub merged: MergeOutput,
    pub store: ReviewStore,
    gateway: Gateway,
    /// Full suggestion lists per session, per item, per codebook.
    cards: HashMap<String, Vec<Vec<CoderCard>>>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ReviewError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ReviewError::Project(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ReviewError::Project(format!("{}: {e}", path.display())))
}

impl ProjectConfig {
    /// Reads `dir/project.json`, or the default config when absent.
    pub fn load(dir: &Path) -> Result<Self, ReviewError> {
        let path = dir.join(PROJECT_FILE);
        if path.exists() {
            read_json(&path)
        } else {
            Ok(ProjectConfig::default())
        }
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::from)?;
        text.push('\n');
        std::fs::write(dir.join(PROJECT_FILE), text)
    }
}

/// Top suggestions of one codebook for one merged code, kept in both orders.
struct CoderCard {
    open: Vec<Suggestion>,
    /// Similarity first, ties by label, so child codes don't stand out.
    blind: Vec<Suggestion>,
}

impl CoderCard {
    fn new(all: Vec<Suggestion>, k: usize) -> Self {
        let mut keyed: Vec<(String, &Suggestion)> =
            all.iter().map(|s| (normalize_label(&s.code.label), s)).collect();
        keyed.sort_by(|(la, a), (lb, b)| b.similarity.total_cmp(&a.similarity).then_with(|| la.cmp(lb)));
        let blind = keyed.into_iter().take(k).map(|(_, s)| s.clone()).collect();
        let open = all.into_iter().take(k).collect();
        CoderCard { open, blind }
    }
}

impl Project {
    pub fn new(
        config: ProjectConfig,
        corpus: Option<Corpus>,
        codebooks: Vec<Codebook>,
        merged: MergeOutput,
        store: ReviewStore,
        gateway: Gateway,
    ) -> Result<Self, ReviewError> {
        for id in &merged.coder_ids {
            if !codebooks.iter().any(|c| &c.coder_id == id) {
                return Err(ReviewError::Project(format!("merge references missing codebook {id:?}")));
            }
        }
        Ok(Project {
            root: None,
            config,
            corpus,
            codebooks,
            merged,
            store,
            gateway,
            cards: HashMap::new(),
        })
    }

    /// Loads a project directory; `gateway` provides embeddings for
    /// suggestions.
    pub fn open(root: &Path, gateway: Gateway) -> Result<Self, ReviewError> {
        let config = ProjectConfig::load(root)?;
        let corpus_path = root.join(CORPUS_FILE);
        let corpus = if corpus_path.exists() {
            let f = std::fs::File::open(&corpus_path)?;
            let mut c = read_corpus(std::io::BufReader::new(f))
                .map_err(|e| ReviewError::Project(format!("{}: {e}", corpus_path.display())))?;
            c.metadata = config.metadata.clone();
            Some(c)
        } else {
            None
        };
        let mut paths: Vec<PathBuf> = match std::fs::read_dir(root.join(CODEBOOK_DIR)) {
            Ok(rd) => rd
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect(),
            Err(_) => Vec::new(),
        };
        paths.sort();
        let codebooks = paths
            .iter()
            .map(|p| Codebook::load(p).map_err(|e| ReviewError::Project(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let merged = MergeOutput::load(&root.join(MERGED_FILE))
            .map_err(|e| ReviewError::Project(e.to_string()))?;
        let store = ReviewStore::open(&root.join(JOURNAL_FILE))?;
        let mut p = Project::new(config, corpus, codebooks, merged, store, gateway)?;
        p.root = Some(root.to_path_buf());
        Ok(p)
    }

    pub fn codebook(&self, coder_id: &str) -> Option<&Codebook> {
        self.codebooks.iter().find(|c| c.coder_id == coder_id)
    }

    pub fn create_session(&mut self, spec: &SessionSpec) -> Result<ReviewSession, ReviewError> {
        let population: Vec<String> = self.merged.merged.iter().map(|m| m.id.clone()).collect();
        self.store
            .create_session(spec, &population, &self.merged.coder_ids)
    }

    fn cards(&mut self, session: &ReviewSession) -> Result<&Vec<Vec<CoderCard>>, ReviewError> {
        if !self.cards.contains_key(&session.id) {
            let mut items = Vec::with_capacity(session.merged_code_ids.len());
            for m in &session.merged_code_ids {
                let merged = self
                    .merged
                    .merged_code(m)
                    .ok_or_else(|| ReviewError::UnknownMergedCode(m.clone()))?;
                let mut per = Vec::with_capacity(session.coder_ids.len());
                for c in &session.coder_ids {
                    let cb = self
                        .codebook(c)
                        .ok_or_else(|| ReviewError::UnknownCoder(c.clone()))?;
                    per.push(CoderCard::new(
                        suggest_near_codes(merged, cb, usize::MAX, &self.gateway)?,
                        self.config.suggestions_per_codebook,
                    ));
                }
                items.push(per);
            }
            self.cards.insert(session.id.clone(), items);
        }
        Ok(&self.cards[&session.id])
    }

    fn examples(&self, ids: &[String]) -> Vec<MessageView> {
        let Some(corpus) = &self.corpus else {
            return Vec::new();
        };
        ids.iter()
            .filter_map(|id| corpus.message(id))
            .take(2)
            .map(|m| MessageView {
                id: m.id.clone(),
                author: m.author.clone(),
                text: m.text.clone(),
            })
            .collect()
    }

    /// Review cards in session order. In a blind session the merge's own
    /// decisions (coverage flags, child marks, child-first ordering) are
    /// withheld per item until `reviewer` has saved a decision on it.
    pub fn items(&mut self, session_id: &str, reviewer: Option<&str>) -> Result<Vec<ReviewItem>, ReviewError> {
        let session = self.store.session(session_id)?.clone();
        if let Some(r) = reviewer {
            if !session.has_reviewer(r) {
                return Err(ReviewError::UnknownReviewer(r.to_string()));
            }
        } else if session.blind {
            return Err(ReviewError::Invalid("blind sessions need ?reviewer=".into()));
        }
        self.cards(&session)?;
        let cards = &self.cards[&session.id];
        let mut out = Vec::with_capacity(session.merged_code_ids.len());
        for (i, (m, per)) in session.merged_code_ids.iter().zip(cards).enumerate() {
            let merged = self.merged.merged_code(m).expect("checked when building cards");
            let reveal = !session.blind
                || reviewer.is_some_and(|r| self.store.has_saved(&session.id, r, m));
            let suggestions = session
                .coder_ids
                .iter()
                .zip(per)
                .map(|(coder_id, card)| {
                    let list = if reveal { &card.open } else { &card.blind };
                    CodebookSuggestions {
                        coder_id: coder_id.clone(),
                        codes: list
                            .iter()
                            .map(|s| SuggestionView {
                                examples: self.examples(&s.code.example_message_ids),
                                code_id: s.code.id.clone(),
                                label: s.code.label.clone(),
                                definition: s.code.definition.clone(),
                                similarity: s.similarity,
                                is_child: reveal.then_some(s.is_child),
                            })
                            .collect(),
                    }
                })
                .collect();
            out.push(ReviewItem {
                position: i + 1,
                round: session.round_of(i + 1).expect("rounds tile the sample"),
                merged_code_id: m.clone(),
                label: merged.label.clone(),
                definition: merged.definition.clone(),
                suggestions,
                algorithmic_coverage: reveal.then(|| {
                    merged
                        .algorithmic_coverage
                        .iter()
                        .filter(|(c, _)| session.coder_ids.contains(c))
                        .map(|(c, v)| (c.clone(), *v))
                        .collect()
                }),
                decisions: reviewer
                    .map(|r| self.store.decisions_by(&session.id, r, m))
                    .unwrap_or_default(),
            });
        }
        Ok(out)
    }

    pub fn record_decision(&mut self, session_id: &str, mut d: CoverageDecision) -> Result<CoverageDecision, ReviewError> {
        if d.session_id.is_empty() {
            d.session_id = session_id.to_string();
        } else if d.session_id != session_id {
            return Err(ReviewError::Invalid("session id in body and path differ".into()));
        }
        self.store.record_decision(d)
    }

    pub fn list_discrepancies(&self, session_id: &str, round: usize) -> Result<Vec<Discrepancy>, ReviewError> {
        self.store.list_discrepancies(session_id, round)
    }

    /// Reviewer pairs, then each reviewer and the consensus against the
    /// algorithmic coverage.
    pub fn kappa(&self, session_id: &str, round: Option<usize>) -> Result<Vec<PairKappa>, ReviewError> {
        let mut out = self.store.kappa(session_id, round)?;
        let merged = &self.merged;
        out.extend(self.store.kappa_against(session_id, round, ALGORITHM, |m, c| {
            merged
                .merged_code(m)
                .and_then(|mc| mc.algorithmic_coverage.get(c).copied())
                .unwrap_or(false)
        })?);
        Ok(out)
    }

    pub fn label_quality(&mut self, session_id: &str, label: QualityLabel) -> Result<QualityLabel, ReviewError> {
        let merged = &self.merged;
        let codebooks = &self.codebooks;
        self.store.label_quality(session_id, label, |dim, target| {
            if dim.targets_merged() {
                merged.merged_code(target).is_some()
            } else {
                codebooks.iter().any(|cb| cb.code(target).is_some())
            }
        })
    }

    /// Configured coverage groups, or the default grouping.
    pub fn groups(&self) -> Vec<CoverageGroup> {
        if !self.config.groups.is_empty() {
            return self.config.groups.clone();
        }
        let in_merge = |cb: &&Codebook| self.merged.coder_ids.contains(&cb.coder_id);
        let humans: Vec<&str> = self
            .codebooks
            .iter()
            .filter(in_merge)
            .filter(|c| c.kind == CoderKind::Human)
            .map(|c| c.coder_id.as_str())
            .collect();
        let mut groups = Vec::new();
        if !humans.is_empty() {
            groups.push(CoverageGroup::new("Humans", humans));
        }
        for cb in self.codebooks.iter().filter(in_merge) {
            if cb.kind == CoderKind::Machine {
                groups.push(CoverageGroup::new(&cb.coder_id, [cb.coder_id.as_str()]));
            }
        }
        groups
    }

    pub fn validation_input(&self) -> ValidationInput {
        let mut approaches = Vec::new();
        for a in Approach::ALL {
            let code_ids: Vec<String> = self
                .codebooks
                .iter()
                .filter(|cb| cb.kind == CoderKind::Machine && cb.approach == Some(a))
                .flat_map(|cb| cb.codes.iter().map(|c| c.id.clone()))
                .collect();
            if self.codebooks.iter().any(|cb| cb.approach == Some(a)) {
                approaches.push(ApproachCodes {
                    name: a.display_name().to_string(),
                    code_ids,
                });
            }
        }
        ValidationInput {
            approaches,
            groundedness: parsed(self.store.resolved_labels(Dimension::Groundedness)),
            breadth: parsed(self.store.resolved_labels(Dimension::Breadth)),
        }
    }

    /// Resolved coverage for a session; merged codes with any unresolved
    /// codebook are left out and counted.
    pub fn coverage_matrix(&self, session: &ReviewSession) -> (CoverageMatrix, usize) {
        let mut m = CoverageMatrix {
            coder_ids: session.coder_ids.clone(),
            ..CoverageMatrix::default()
        };
        let mut pending = 0;
        for id in &session.merged_code_ids {
            let values: Option<Vec<bool>> = session
                .coder_ids
                .iter()
                .map(|c| self.store.resolved_coverage(session, id, c))
                .collect();
            match values {
                Some(v) => {
                    m.merged_ids.push(id.clone());
                    for (c, covered) in session.coder_ids.iter().zip(v) {
                        m.set(id, c, covered);
                    }
                }
                None => pending += 1,
            }
        }
        let gains = self.store.resolved_labels(Dimension::Gain);
        let sources = self.store.resolved_labels(Dimension::Source);
        for id in &m.merged_ids.clone() {
            if let Some(g) = gains.get(id).and_then(|v| v.parse().ok()) {
                m.gain.insert(id.clone(), g);
            }
            if let Some(s) = sources.get(id).and_then(|v| v.parse().ok()) {
                m.source.insert(id.clone(), s);
            }
        }
        (m, pending)
    }

    /// Table 2, 4 or 5. Tables 4 and 5 use `session_id` or the latest
    /// session.
    pub fn report(&self, table: u8, session_id: Option<&str>) -> Result<ReportResponse, ReviewError> {
        if table == 2 {
            let t = table2(&self.validation_input());
            return Ok(ReportResponse {
                text: t.to_text(),
                table: t,
                session_id: None,
                pending: 0,
            });
        }
        if table != 4 && table != 5 {
            return Err(ReviewError::Invalid(format!("no table {table} (2, 4 or 5)")));
        }
        let session = match session_id {
            Some(id) => Some(self.store.session(id)?.clone()),
            None => self.store.sessions().last().cloned(),
        };
        let (matrix, pending) = match &session {
            Some(s) => self.coverage_matrix(s),
            None => (CoverageMatrix::default(), 0),
        };
        let u = unique_coverage(&matrix, &self.groups())?;
        let t = if table == 4 { table4(&u) } else { table5(&u) };
        Ok(ReportResponse {
            text: t.to_text(),
            table: t,
            session_id: session.map(|s| s.id),
            pending,
        })
    }
}
