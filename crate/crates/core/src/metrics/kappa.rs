use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::MetricsError;

/// Landis–Koch verbal bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Poor,
    Slight,
    Fair,
    Moderate,
    Substantial,
    AlmostPerfect,
}

impl Band {
    pub fn of(kappa: f64) -> Band {
        if kappa <= 0.0 {
            Band::Poor
        } else if kappa <= 0.20 {
            Band::Slight
        } else if kappa <= 0.40 {
            Band::Fair
        } else if kappa <= 0.60 {
            Band::Moderate
        } else if kappa <= 0.80 {
            Band::Substantial
        } else {
            Band::AlmostPerfect
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Band::Poor => "poor",
            Band::Slight => "slight",
            Band::Fair => "fair",
            Band::Moderate => "moderate",
            Band::Substantial => "substantial",
            Band::AlmostPerfect => "almost_perfect",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub kappa: f64,
    pub band: Band,
    pub n: u64,
    pub observed_agreement: f64,
    pub expected_agreement: f64,
    /// Chance agreement was 1, so kappa is set by convention.
    pub degenerate: bool,
}

impl ReliabilityReport {
    /// `0.68 (substantial)` style badge text.
    pub fn badge(&self) -> String {
        format!("{:.2} ({})", self.kappa, self.band)
    }
}

/// Paired label counts between two raters over a shared alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContingencyTable<L: Ord> {
    counts: BTreeMap<(L, L), u64>,
}

impl<L: Ord + Clone> ContingencyTable<L> {
    pub fn new() -> Self {
        ContingencyTable {
            counts: BTreeMap::new(),
        }
    }

    pub fn from_pairs(a: &[L], b: &[L]) -> Result<Self, MetricsError> {
        if a.len() != b.len() {
            return Err(MetricsError::LengthMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        let mut t = ContingencyTable::new();
        for (x, y) in a.iter().zip(b) {
            t.add(x.clone(), y.clone(), 1);
        }
        Ok(t)
    }

    pub fn add(&mut self, a: L, b: L, count: u64) {
        *self.counts.entry((a, b)).or_insert(0) += count;
    }

    pub fn get(&self, a: &L, b: &L) -> u64 {
        self.counts.get(&(a.clone(), b.clone())).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn alphabet(&self) -> BTreeSet<L> {
        self.counts
            .keys()
            .flat_map(|(a, b)| [a.clone(), b.clone()])
            .collect()
    }

    /// Cohen's kappa from the table.
    ///
    /// Sums are kept in integers (`n·agree` and `Σ row·col`) and divided
    /// once, so the value does not depend on label order.
    pub fn kappa(&self) -> Result<ReliabilityReport, MetricsError> {
        let n = self.total();
        if n == 0 {
            return Err(MetricsError::Empty);
        }
        let mut rows: BTreeMap<&L, u128> = BTreeMap::new();
        let mut cols: BTreeMap<&L, u128> = BTreeMap::new();
        let mut agree: u128 = 0;
        for ((a, b), &c) in &self.counts {
            *rows.entry(a).or_default() += u128::from(c);
            *cols.entry(b).or_default() += u128::from(c);
            if a == b {
                agree += u128::from(c);
            }
        }
        let chance: u128 = rows
            .iter()
            .map(|(l, r)| r * cols.get(l).copied().unwrap_or(0))
            .sum();
        let n = u128::from(n);
        let nn = n * n;
        let observed = agree as f64 / n as f64;
        let expected = chance as f64 / nn as f64;
        let (kappa, degenerate) = if chance == nn {
            (if agree == n { 1.0 } else { 0.0 }, true)
        } else {
            let num = (agree * n) as f64 - chance as f64;
            (num / (nn - chance) as f64, false)
        };
        Ok(ReliabilityReport {
            kappa,
            band: Band::of(kappa),
            n: n as u64,
            observed_agreement: observed,
            expected_agreement: expected,
            degenerate,
        })
    }
}

/// Cohen's kappa between two equal-length label sequences.
pub fn cohen_kappa<L: Ord + Clone>(a: &[L], b: &[L]) -> Result<ReliabilityReport, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    ContingencyTable::from_pairs(a, b)?.kappa()
}
