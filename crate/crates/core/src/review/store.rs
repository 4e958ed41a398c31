//! Append-only review journal.
//!
//! Every write is one JSON line appended and synced before the in-memory
//! state changes, so the file is the write-ahead log and the state is a fold
//! over it. Nothing is ever deleted; a newer entry with the same key
//! supersedes an older one and both stay in the history. A torn final line
//! (a crash mid-append) is dropped on open.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::{sample_ids, check_rounds, CoverageDecision, Dimension, QualityLabel, ReviewError, ReviewSession, SessionSpec};
use crate::metrics::{cohen_kappa, ReliabilityReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Session { session: ReviewSession },
    Decision { decision: CoverageDecision },
    Label { session_id: String, label: QualityLabel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    pub at: String,
    #[serde(flatten)]
    pub event: Event,
}

/// `(session, merged, coder, reviewer)`; reviewer `None` is the consensus.
type DecisionKey = (String, String, String, Option<String>);
/// `(target, dimension, reviewer)`; reviewer `None` is the consensus.
type LabelKey = (String, Dimension, Option<String>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub merged_code_id: String,
    pub coder_id: String,
    pub values: BTreeMap<String, bool>,
    pub memos: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairKappa {
    pub reviewer_a: String,
    pub reviewer_b: String,
    pub report: ReliabilityReport,
    pub badge: String,
}

/// Rater name used for reconciled values in kappa output.
pub const CONSENSUS: &str = "consensus";

impl PairKappa {
    fn new(a: &str, b: &str, va: &[bool], vb: &[bool]) -> Result<Self, ReviewError> {
        let report = cohen_kappa(va, vb)?;
        Ok(PairKappa {
            reviewer_a: a.to_string(),
            reviewer_b: b.to_string(),
            badge: report.badge(),
            report,
        })
    }
}

#[derive(Debug, Default)]
pub struct ReviewStore {
    path: Option<PathBuf>,
    entries: Vec<JournalEntry>,
    sessions: BTreeMap<String, usize>,
    session_order: Vec<String>,
    decisions: BTreeMap<DecisionKey, usize>,
    labels: BTreeMap<LabelKey, usize>,
}

impl ReviewStore {
    pub fn in_memory() -> Self {
        ReviewStore::default()
    }

    /// Opens (or creates) a journal file.
    pub fn open(path: &Path) -> Result<Self, ReviewError> {
        let mut store = ReviewStore {
            path: Some(path.to_path_buf()),
            ..ReviewStore::default()
        };
        if !path.exists() {
            return Ok(store);
        }
        let lines: Vec<String> = BufReader::new(File::open(path)?)
            .lines()
            .collect::<Result<_, _>>()?;
        let last = lines.iter().rposition(|l| !l.trim().is_empty());
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<JournalEntry>(line) {
                Ok(e) => store.apply(e),
                Err(e) if Some(i) == last => {
                    log::warn!("dropping torn journal line {} in {}: {e}", i + 1, path.display());
                    let mut kept = String::new();
                    for l in &lines[..i] {
                        kept.push_str(l);
                        kept.push('\n');
                    }
                    let tmp = path.with_extension("journal.tmp");
                    std::fs::write(&tmp, kept)?;
                    std::fs::rename(&tmp, path)?;
                }
                Err(e) => {
                    return Err(ReviewError::Journal(format!("line {}: {e}", i + 1)));
                }
            }
        }
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn entries(&self) -> &[JournalEntry] {
        &self.entries
    }

    fn apply(&mut self, e: JournalEntry) {
        let idx = self.entries.len();
        match &e.event {
            Event::Session { session } => {
                if self.sessions.insert(session.id.clone(), idx).is_none() {
                    self.session_order.push(session.id.clone());
                }
            }
            Event::Decision { decision: d } => {
                let who = (!d.is_consensus).then(|| d.reviewer.clone());
                self.decisions.insert(
                    (d.session_id.clone(), d.merged_code_id.clone(), d.coder_id.clone(), who),
                    idx,
                );
            }
            Event::Label { label: l, .. } => {
                let who = (!l.is_consensus).then(|| l.reviewer.clone());
                self.labels.insert((l.target_id.clone(), l.dimension, who), idx);
            }
        }
        self.entries.push(e);
    }

    fn append(&mut self, event: Event) -> Result<&JournalEntry, ReviewError> {
        let entry = JournalEntry {
            seq: self.entries.last().map_or(1, |e| e.seq + 1),
            at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            event,
        };
        if let Some(path) = &self.path {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            let mut line = serde_json::to_string(&entry).map_err(|e| ReviewError::Journal(e.to_string()))?;
            line.push('\n');
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        self.apply(entry);
        Ok(self.entries.last().expect("just appended"))
    }

    pub fn sessions(&self) -> impl Iterator<Item = &ReviewSession> {
        self.session_order.iter().filter_map(|id| self.session(id).ok())
    }

    pub fn session(&self, id: &str) -> Result<&ReviewSession, ReviewError> {
        match self.sessions.get(id).map(|&i| &self.entries[i].event) {
            Some(Event::Session { session }) => Ok(session),
            _ => Err(ReviewError::UnknownSession(id.to_string())),
        }
    }

    /// Samples `spec.sample_size` of `population` and stores the session.
    pub fn create_session(
        &mut self,
        spec: &SessionSpec,
        population: &[String],
        all_coders: &[String],
    ) -> Result<ReviewSession, ReviewError> {
        let merged_code_ids = sample_ids(population, spec.sample_size, spec.seed)?;
        let n = merged_code_ids.len();
        let rounds = spec.rounds.clone().unwrap_or_else(|| {
            if n == 0 {
                Vec::new()
            } else {
                vec![(1, n)]
            }
        });
        check_rounds(&rounds, n)?;
        let reviewers: Vec<String> = spec.reviewers.iter().map(|r| r.trim().to_string()).collect();
        if reviewers.is_empty() || reviewers.iter().any(String::is_empty) {
            return Err(ReviewError::Invalid("a session needs named reviewers".into()));
        }
        if reviewers.iter().collect::<BTreeSet<_>>().len() != reviewers.len() {
            return Err(ReviewError::Invalid("duplicate reviewer names".into()));
        }
        let coder_ids = match &spec.coder_ids {
            Some(ids) => {
                if let Some(bad) = ids.iter().find(|c| !all_coders.contains(c)) {
                    return Err(ReviewError::UnknownCoder(bad.clone()));
                }
                ids.clone()
            }
            None => all_coders.to_vec(),
        };
        let id = match &spec.id {
            Some(id) if self.sessions.contains_key(id) => {
                return Err(ReviewError::DuplicateSession(id.clone()))
            }
            Some(id) if id.trim().is_empty() || id.contains('/') => {
                return Err(ReviewError::Invalid(format!("bad session id {id:?}")))
            }
            Some(id) => id.clone(),
            None => {
                let mut k = self.sessions.len() + 1;
                while self.sessions.contains_key(&format!("s{k}")) {
                    k += 1;
                }
                format!("s{k}")
            }
        };
        let session = ReviewSession {
            id,
            merged_code_ids,
            seed: spec.seed,
            blind: spec.blind,
            reviewers,
            rounds,
            coder_ids,
        };
        self.append(Event::Session {
            session: session.clone(),
        })?;
        Ok(session)
    }

    /// Upserts one decision. A consensus decision needs earlier individual
    /// decisions from at least two reviewers on the same merged code and
    /// codebook.
    pub fn record_decision(&mut self, mut d: CoverageDecision) -> Result<CoverageDecision, ReviewError> {
        let s = self.session(&d.session_id)?;
        if !s.has_reviewer(&d.reviewer) {
            return Err(ReviewError::UnknownReviewer(d.reviewer));
        }
        let pos = s
            .position_of(&d.merged_code_id)
            .ok_or_else(|| ReviewError::UnknownMergedCode(d.merged_code_id.clone()))?;
        if !s.coder_ids.contains(&d.coder_id) {
            return Err(ReviewError::UnknownCoder(d.coder_id));
        }
        let round = s.round_of(pos).expect("rounds tile the sample");
        if d.round == 0 {
            d.round = round;
        } else if d.round != round {
            return Err(ReviewError::WrongRound {
                expected: round,
                got: d.round,
            });
        }
        if d.is_consensus {
            let priors = self.individual_values(&d.session_id, &d.merged_code_id, &d.coder_id);
            if priors.len() < 2 {
                return Err(ReviewError::ConsensusWithoutPriors {
                    merged_code_id: d.merged_code_id,
                    coder_id: d.coder_id,
                });
            }
        }
        self.append(Event::Decision { decision: d.clone() })?;
        Ok(d)
    }

    /// Current decision; `reviewer = None` asks for the consensus.
    pub fn decision(
        &self,
        session: &str,
        merged: &str,
        coder: &str,
        reviewer: Option<&str>,
    ) -> Option<&CoverageDecision> {
        let key = (
            session.to_string(),
            merged.to_string(),
            coder.to_string(),
            reviewer.map(str::to_string),
        );
        match self.decisions.get(&key).map(|&i| &self.entries[i].event) {
            Some(Event::Decision { decision }) => Some(decision),
            _ => None,
        }
    }

    /// Every stored version for one key, oldest first.
    pub fn history(
        &self,
        session: &str,
        merged: &str,
        coder: &str,
        reviewer: Option<&str>,
    ) -> Vec<&JournalEntry> {
        self.entries
            .iter()
            .filter(|e| match &e.event {
                Event::Decision { decision: d } => {
                    d.session_id == session
                        && d.merged_code_id == merged
                        && d.coder_id == coder
                        && (!d.is_consensus).then_some(d.reviewer.as_str()) == reviewer
                }
                _ => false,
            })
            .collect()
    }

    fn individual_values(&self, session: &str, merged: &str, coder: &str) -> BTreeMap<&str, &CoverageDecision> {
        self.decisions
            .range(
                (session.to_string(), merged.to_string(), coder.to_string(), Some(String::new()))..,
            )
            .take_while(|((s, m, c, r), _)| s == session && m == merged && c == coder && r.is_some())
            .filter_map(|(_, &i)| match &self.entries[i].event {
                Event::Decision { decision } => Some((decision.reviewer.as_str(), decision)),
                _ => None,
            })
            .collect()
    }

    /// Decision index entries for one merged code, in key order.
    fn item_entries<'a>(
        &'a self,
        session: &'a str,
        merged: &'a str,
    ) -> impl Iterator<Item = (&'a DecisionKey, &'a usize)> + 'a {
        self.decisions
            .range((session.to_string(), merged.to_string(), String::new(), None)..)
            .take_while(move |((s, m, _, _), _)| s == session && m == merged)
    }

    /// True once `reviewer` saved any decision on `merged` in `session`.
    pub fn has_saved(&self, session: &str, reviewer: &str, merged: &str) -> bool {
        self.item_entries(session, merged)
            .any(|((_, _, _, r), _)| r.as_deref() == Some(reviewer))
    }

    pub fn decisions_by(&self, session: &str, reviewer: &str, merged: &str) -> Vec<CoverageDecision> {
        self.item_entries(session, merged)
            .filter(|((_, _, _, r), _)| r.as_deref() == Some(reviewer))
            .filter_map(|(_, &i)| match &self.entries[i].event {
                Event::Decision { decision } => Some(decision.clone()),
                _ => None,
            })
            .collect()
    }

    /// Per-reviewer values over every (merged code, codebook) key of a round,
    /// failing when any reviewer left a key undecided.
    fn round_values(
        &self,
        session: &ReviewSession,
        round: usize,
    ) -> Result<Vec<(String, String, BTreeMap<String, (bool, String)>)>, ReviewError> {
        let items = session.round_items(round)?;
        let mut out = Vec::new();
        let mut missing = 0;
        for m in items {
            for c in &session.coder_ids {
                let mut per = BTreeMap::new();
                for r in &session.reviewers {
                    match self.decision(&session.id, m, c, Some(r)) {
                        Some(d) => {
                            per.insert(r.clone(), (d.covered, d.memo.clone()));
                        }
                        None => missing += 1,
                    }
                }
                out.push((m.clone(), c.clone(), per));
            }
        }
        if missing > 0 {
            return Err(ReviewError::RoundIncomplete { round, missing });
        }
        Ok(out)
    }

    /// Keys in a completed round where reviewers disagree.
    pub fn list_discrepancies(&self, session: &str, round: usize) -> Result<Vec<Discrepancy>, ReviewError> {
        let s = self.session(session)?;
        Ok(self
            .round_values(s, round)?
            .into_iter()
            .filter(|(_, _, per)| per.values().map(|v| v.0).collect::<BTreeSet<_>>().len() > 1)
            .map(|(merged_code_id, coder_id, per)| Discrepancy {
                merged_code_id,
                coder_id,
                values: per.iter().map(|(r, v)| (r.clone(), v.0)).collect(),
                memos: per.into_iter().map(|(r, v)| (r, v.1)).collect(),
            })
            .collect())
    }

    /// Pairwise kappa between reviewers over one completed round, or over
    /// every completed round when `round` is `None`.
    pub fn kappa(&self, session: &str, round: Option<usize>) -> Result<Vec<PairKappa>, ReviewError> {
        let s = self.session(session)?;
        let rounds: Vec<usize> = match round {
            Some(r) => vec![r],
            None => (1..=s.rounds.len())
                .filter(|&r| self.round_values(s, r).is_ok())
                .collect(),
        };
        let mut values = Vec::new();
        for r in rounds {
            values.extend(self.round_values(s, r)?);
        }
        let mut out = Vec::new();
        for (i, a) in s.reviewers.iter().enumerate() {
            for b in &s.reviewers[i + 1..] {
                let va: Vec<bool> = values.iter().map(|(_, _, p)| p[a].0).collect();
                let vb: Vec<bool> = values.iter().map(|(_, _, p)| p[b].0).collect();
                out.push(PairKappa::new(a, b, &va, &vb)?);
            }
        }
        Ok(out)
    }

    /// Each reviewer, and the resolved values when every key is resolved,
    /// against an outside rater `name` over the same complete rounds.
    pub fn kappa_against(
        &self,
        session: &str,
        round: Option<usize>,
        name: &str,
        rater: impl Fn(&str, &str) -> bool,
    ) -> Result<Vec<PairKappa>, ReviewError> {
        let s = self.session(session)?;
        let rounds: Vec<usize> = match round {
            Some(r) => vec![r],
            None => (1..=s.rounds.len())
                .filter(|&r| self.round_values(s, r).is_ok())
                .collect(),
        };
        let mut values = Vec::new();
        for r in rounds {
            values.extend(self.round_values(s, r)?);
        }
        let other: Vec<bool> = values.iter().map(|(m, c, _)| rater(m, c)).collect();
        let mut out = Vec::new();
        for r in &s.reviewers {
            let v: Vec<bool> = values.iter().map(|(_, _, p)| p[r].0).collect();
            out.push(PairKappa::new(r, name, &v, &other)?);
        }
        let resolved: Option<Vec<bool>> = values
            .iter()
            .map(|(m, c, _)| self.resolved_coverage(s, m, c))
            .collect();
        if let Some(v) = resolved {
            out.push(PairKappa::new(CONSENSUS, name, &v, &other)?);
        }
        Ok(out)
    }

    /// The consensus value, or the shared value when every reviewer decided
    /// the same way.
    pub fn resolved_coverage(&self, session: &ReviewSession, merged: &str, coder: &str) -> Option<bool> {
        if let Some(d) = self.decision(&session.id, merged, coder, None) {
            return Some(d.covered);
        }
        let per = self.individual_values(&session.id, merged, coder);
        let values: BTreeSet<bool> = session
            .reviewers
            .iter()
            .map(|r| per.get(r.as_str()).map(|d| d.covered))
            .collect::<Option<_>>()?;
        (values.len() == 1).then(|| *values.iter().next().expect("one value"))
    }

    /// Upserts a quality label. `target_ok` says whether the id names a
    /// merged code (for gain and source) or a raw code (otherwise).
    pub fn label_quality(
        &mut self,
        session: &str,
        label: QualityLabel,
        target_ok: impl Fn(Dimension, &str) -> bool,
    ) -> Result<QualityLabel, ReviewError> {
        let s = self.session(session)?;
        if !s.has_reviewer(&label.reviewer) {
            return Err(ReviewError::UnknownReviewer(label.reviewer));
        }
        label
            .dimension
            .check_value(&label.value)
            .map_err(ReviewError::IllegalValue)?;
        if !target_ok(label.dimension, &label.target_id) {
            return Err(ReviewError::UnknownTarget {
                dimension: label.dimension,
                target_id: label.target_id,
            });
        }
        if label.is_consensus && self.individual_labels(&label.target_id, label.dimension).len() < 2 {
            return Err(ReviewError::ConsensusWithoutPriors {
                merged_code_id: label.target_id,
                coder_id: label.dimension.to_string(),
            });
        }
        self.append(Event::Label {
            session_id: session.to_string(),
            label: label.clone(),
        })?;
        Ok(label)
    }

    fn individual_labels(&self, target: &str, dim: Dimension) -> Vec<&QualityLabel> {
        self.labels
            .iter()
            .filter(|((t, d, r), _)| t == target && *d == dim && r.is_some())
            .filter_map(|(_, &i)| match &self.entries[i].event {
                Event::Label { label, .. } => Some(label),
                _ => None,
            })
            .collect()
    }

    pub fn label(&self, target: &str, dim: Dimension, reviewer: Option<&str>) -> Option<&QualityLabel> {
        let key = (target.to_string(), dim, reviewer.map(str::to_string));
        match self.labels.get(&key).map(|&i| &self.entries[i].event) {
            Some(Event::Label { label, .. }) => Some(label),
            _ => None,
        }
    }

    /// Settled labels per target: the consensus when present, otherwise the
    /// value all labeling reviewers agree on.
    pub fn resolved_labels(&self, dim: Dimension) -> BTreeMap<String, String> {
        let targets: BTreeSet<&String> = self
            .labels
            .keys()
            .filter(|(_, d, _)| *d == dim)
            .map(|(t, _, _)| t)
            .collect();
        let mut out = BTreeMap::new();
        for t in targets {
            if let Some(c) = self.label(t, dim, None) {
                out.insert(t.clone(), c.value.clone());
                continue;
            }
            let values: BTreeSet<&str> = self
                .individual_labels(t, dim)
                .iter()
                .map(|l| l.value.as_str())
                .collect();
            if values.len() == 1 {
                out.insert(t.clone(), values.into_iter().next().expect("one").to_string());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn population(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("m{i:04}")).collect()
    }

    fn spec(n: usize) -> SessionSpec {
        SessionSpec {
            id: None,
            sample_size: n,
            seed: 11,
            blind: true,
            reviewers: vec!["ana".into(), "ben".into()],
            rounds: None,
            coder_ids: None,
        }
    }

    fn coders() -> Vec<String> {
        vec!["humans".into(), "item_verb".into()]
    }

    fn decide(s: &ReviewSession, m: &str, r: &str, c: &str, covered: bool) -> CoverageDecision {
        CoverageDecision {
            session_id: s.id.clone(),
            merged_code_id: m.into(),
            reviewer: r.into(),
            coder_id: c.into(),
            covered,
            memo: format!("{r} on {m}"),
            round: 0,
            is_consensus: false,
        }
    }

    #[test]
    fn decision_round_trip_and_upsert_history() {
        let mut st = ReviewStore::in_memory();
        let s = st.create_session(&spec(4), &population(6), &coders()).unwrap();
        let m = s.merged_code_ids[0].clone();
        let d = st.record_decision(decide(&s, &m, "ana", "humans", true)).unwrap();
        assert_eq!(d.round, 1);
        assert_eq!(st.decision(&s.id, &m, "humans", Some("ana")), Some(&d));
        let d2 = st.record_decision(decide(&s, &m, "ana", "humans", false)).unwrap();
        assert_eq!(st.decision(&s.id, &m, "humans", Some("ana")), Some(&d2));
        let h = st.history(&s.id, &m, "humans", Some("ana"));
        assert_eq!(h.len(), 2);
        assert!(h[0].seq < h[1].seq && !h[0].at.is_empty());
    }

    #[test]
    fn validation_errors() {
        let mut st = ReviewStore::in_memory();
        let s = st.create_session(&spec(3), &population(3), &coders()).unwrap();
        let m = s.merged_code_ids[0].clone();
        let mut d = decide(&s, &m, "cy", "humans", true);
        assert!(matches!(st.record_decision(d.clone()), Err(ReviewError::UnknownReviewer(_))));
        d.reviewer = "ana".into();
        d.session_id = "nope".into();
        assert!(matches!(st.record_decision(d.clone()), Err(ReviewError::UnknownSession(_))));
        d.session_id = s.id.clone();
        d.coder_id = "topic".into();
        assert!(matches!(st.record_decision(d.clone()), Err(ReviewError::UnknownCoder(_))));
        d.coder_id = "humans".into();
        d.round = 2;
        assert!(matches!(st.record_decision(d.clone()), Err(ReviewError::WrongRound { .. })));
        assert!(matches!(
            st.create_session(&spec(10), &population(5), &coders()),
            Err(ReviewError::SampleTooLarge { .. })
        ));
    }

    #[test]
    fn consensus_needs_two_prior_reviewers() {
        let mut st = ReviewStore::in_memory();
        let s = st.create_session(&spec(2), &population(2), &coders()).unwrap();
        let m = s.merged_code_ids[0].clone();
        let mut c = decide(&s, &m, "ana", "humans", true);
        c.is_consensus = true;
        assert!(matches!(
            st.record_decision(c.clone()),
            Err(ReviewError::ConsensusWithoutPriors { .. })
        ));
        st.record_decision(decide(&s, &m, "ana", "humans", true)).unwrap();
        assert!(st.record_decision(c.clone()).is_err());
        st.record_decision(decide(&s, &m, "ben", "humans", false)).unwrap();
        st.record_decision(c).unwrap();
        assert_eq!(st.resolved_coverage(&s, &m, "humans"), Some(true));
        // the individual decisions are untouched
        assert_eq!(st.decision(&s.id, &m, "humans", Some("ben")).unwrap().covered, false);
    }

    #[test]
    fn discrepancies_need_a_complete_round() {
        let mut st = ReviewStore::in_memory();
        let mut sp = spec(4);
        sp.rounds = Some(vec![(1, 2), (3, 4)]);
        let s = st.create_session(&sp, &population(4), &coders()).unwrap();
        for m in &s.merged_code_ids[..2] {
            for c in coders() {
                st.record_decision(decide(&s, m, "ana", &c, true)).unwrap();
            }
        }
        assert!(matches!(
            st.list_discrepancies(&s.id, 1),
            Err(ReviewError::RoundIncomplete { round: 1, missing: 4 })
        ));
        for m in &s.merged_code_ids[..2] {
            for c in coders() {
                st.record_decision(decide(&s, m, "ben", &c, true)).unwrap();
            }
        }
        assert!(st.list_discrepancies(&s.id, 1).unwrap().is_empty());
        let k = st.kappa(&s.id, Some(1)).unwrap();
        assert_eq!(k[0].report.kappa, 1.0);
        assert_eq!(k[0].badge, "1.00 (almost_perfect)");

        let m1 = s.merged_code_ids[1].clone();
        st.record_decision(decide(&s, &m1, "ben", "item_verb", false)).unwrap();
        let d = st.list_discrepancies(&s.id, 1).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].merged_code_id.as_str(), d[0].coder_id.as_str()), (m1.as_str(), "item_verb"));
        assert_eq!(d[0].values["ana"], true);
        assert_eq!(d[0].memos["ben"], format!("ben on {m1}"));
        assert!(matches!(st.list_discrepancies(&s.id, 3), Err(ReviewError::UnknownRound(3))));
    }

    #[test]
    fn labels_validate_and_resolve() {
        let mut st = ReviewStore::in_memory();
        let s = st.create_session(&spec(1), &population(1), &coders()).unwrap();
        let ok = |d: Dimension, t: &str| d.targets_merged() == t.starts_with('m');
        let l = |r: &str, dim: Dimension, v: &str, t: &str| QualityLabel {
            target_id: t.into(),
            dimension: dim,
            value: v.into(),
            reviewer: r.into(),
            memo: String::new(),
            is_consensus: false,
        };
        st.label_quality(&s.id, l("ana", Dimension::Source, "conversational_dynamics", "m0001"), ok)
            .unwrap();
        assert!(matches!(
            st.label_quality(&s.id, l("ana", Dimension::Breadth, "substantial", "h/0001"), ok),
            Err(ReviewError::IllegalValue(_))
        ));
        assert!(matches!(
            st.label_quality(&s.id, l("ana", Dimension::Gain, "minor", "h/0001"), ok),
            Err(ReviewError::UnknownTarget { .. })
        ));
        st.label_quality(&s.id, l("ana", Dimension::Gain, "minor", "m0001"), ok).unwrap();
        st.label_quality(&s.id, l("ben", Dimension::Gain, "substantial", "m0001"), ok).unwrap();
        assert!(st.resolved_labels(Dimension::Gain).is_empty());
        let mut c = l("ana", Dimension::Gain, "substantial", "m0001");
        c.is_consensus = true;
        st.label_quality(&s.id, c, ok).unwrap();
        assert_eq!(st.resolved_labels(Dimension::Gain)["m0001"], "substantial");
        assert_eq!(st.resolved_labels(Dimension::Source)["m0001"], "conversational_dynamics");
    }

    #[test]
    fn journal_survives_reopen_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("review.journal");
        let s = {
            let mut st = ReviewStore::open(&path).unwrap();
            let s = st.create_session(&spec(2), &population(5), &coders()).unwrap();
            st.record_decision(decide(&s, &s.merged_code_ids[0], "ana", "humans", true)).unwrap();
            s
        };
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"seq\":3,\"at\":\"x\",\"kind\":\"deci").unwrap();
        drop(f);
        let st = ReviewStore::open(&path).unwrap();
        assert_eq!(st.session(&s.id).unwrap(), &s);
        assert_eq!(st.entries().len(), 2);
        assert!(st.decision(&s.id, &s.merged_code_ids[0], "humans", Some("ana")).is_some());

        std::fs::write(&path, "garbage\n{}\n").unwrap();
        assert!(matches!(ReviewStore::open(&path), Err(ReviewError::Journal(_))));
    }

    #[test]
    fn same_seed_same_session_across_stores() {
        let a = ReviewStore::in_memory().create_session(&spec(81), &population(315), &coders()).unwrap();
        let b = ReviewStore::in_memory().create_session(&spec(81), &population(315), &coders()).unwrap();
        assert_eq!(a, b);
    }
}
