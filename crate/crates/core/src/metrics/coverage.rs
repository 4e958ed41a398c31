use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::review::{Gain, Source};

/// A named set of codebooks, e.g. all human coders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageGroup {
    pub name: String,
    pub coder_ids: BTreeSet<String>,
}

impl CoverageGroup {
    pub fn new<I, S>(name: &str, coder_ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        CoverageGroup {
            name: name.to_string(),
            coder_ids: coder_ids.into_iter().map(Into::into).collect(),
        }
    }
}

/// Consensus coverage judgments for a set of merged codes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoverageMatrix {
    pub merged_ids: Vec<String>,
    pub coder_ids: Vec<String>,
    /// `(merged_id, coder_id) -> covered`
    pub covered: BTreeMap<(String, String), bool>,
    pub gain: BTreeMap<String, Gain>,
    pub source: BTreeMap<String, Source>,
}

impl CoverageMatrix {
    pub fn set(&mut self, merged: &str, coder: &str, covered: bool) {
        self.covered
            .insert((merged.to_string(), coder.to_string()), covered);
    }

    fn covering_set(&self, merged: &str) -> BTreeSet<&str> {
        self.coder_ids
            .iter()
            .filter(|c| {
                self.covered
                    .get(&(merged.to_string(), c.to_string()))
                    .copied()
                    .unwrap_or(false)
            })
            .map(String::as_str)
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupTally {
    pub name: String,
    pub unique: usize,
    pub merged_ids: Vec<String>,
    /// Counts keyed by gain label; `None` means not yet labeled.
    pub by_gain: BTreeMap<Option<Gain>, usize>,
    /// Substantial-gain codes keyed by source label.
    pub substantial_by_source: BTreeMap<Option<Source>, usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UniqueCoverage {
    pub groups: Vec<GroupTally>,
    pub total_unique: usize,
    pub total_by_gain: BTreeMap<Option<Gain>, usize>,
    pub total_substantial_by_source: BTreeMap<Option<Source>, usize>,
}

/// Tallies merged codes covered by exactly one group.
///
/// A merged code with covering set `S` belongs to the smallest declared
/// group `G` with `S ⊆ G` (declaration order breaks size ties). With
/// groups {humans}, {item, verb}, {item}, {verb} this counts a code covered
/// by the item coder alone under {item} and one covered by both item coders
/// under {item, verb}, so no code lands in two groups. Codes covered by
/// nobody, or by coders spanning several groups, are not unique.
pub fn unique_coverage(
    matrix: &CoverageMatrix,
    groups: &[CoverageGroup],
) -> Result<UniqueCoverage, MetricsError> {
    let gaps: Vec<(String, String)> = matrix
        .merged_ids
        .iter()
        .flat_map(|m| matrix.coder_ids.iter().map(move |c| (m.clone(), c.clone())))
        .filter(|k| !matrix.covered.contains_key(k))
        .collect();
    if !gaps.is_empty() {
        return Err(MetricsError::MissingConsensus(gaps));
    }
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by_key(|&i| (groups[i].coder_ids.len(), i));

    let mut out = UniqueCoverage {
        groups: groups
            .iter()
            .map(|g| GroupTally {
                name: g.name.clone(),
                ..GroupTally::default()
            })
            .collect(),
        ..UniqueCoverage::default()
    };
    for merged in &matrix.merged_ids {
        let set = matrix.covering_set(merged);
        if set.is_empty() {
            continue;
        }
        let Some(&gi) = order
            .iter()
            .find(|&&i| set.iter().all(|c| groups[i].coder_ids.contains(*c)))
        else {
            continue;
        };
        let gain = matrix.gain.get(merged).copied();
        let source = matrix.source.get(merged).copied();
        let tally = &mut out.groups[gi];
        tally.unique += 1;
        tally.merged_ids.push(merged.clone());
        *tally.by_gain.entry(gain).or_default() += 1;
        *out.total_by_gain.entry(gain).or_default() += 1;
        if gain == Some(Gain::Substantial) {
            *tally.substantial_by_source.entry(source).or_default() += 1;
            *out.total_substantial_by_source.entry(source).or_default() += 1;
        }
        out.total_unique += 1;
    }
    Ok(out)
}
