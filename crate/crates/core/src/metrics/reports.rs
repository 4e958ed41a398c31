use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::coverage::UniqueCoverage;
use crate::review::{Breadth, Gain, Groundedness, Source};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub cells: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub table: u8,
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    pub fn cell(&self, row: &str, column: &str) -> Option<&str> {
        let col = self.columns.iter().position(|c| c == column)?;
        let row = self.rows.iter().find(|r| r.label == row)?;
        if col == 0 {
            return Some(&row.label);
        }
        row.cells.get(col - 1).map(String::as_str)
    }

    /// Plain-text rendering with left-aligned first column and
    /// right-aligned value columns.
    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.columns.iter().map(|c| c.chars().count()).collect();
        for r in &self.rows {
            widths[0] = widths[0].max(r.label.chars().count());
            for (i, c) in r.cells.iter().enumerate() {
                widths[i + 1] = widths[i + 1].max(c.chars().count());
            }
        }
        let line = |first: &str, rest: &[String]| {
            let mut s = format!("{first:<w$}", w = widths[0]);
            for (i, c) in rest.iter().enumerate() {
                s.push_str(&format!("  {c:>w$}", w = widths[i + 1]));
            }
            s.trim_end().to_string()
        };
        let mut out = format!("Table {}: {}\n", self.table, self.title);
        out.push_str(&line(&self.columns[0], &self.columns[1..]));
        out.push('\n');
        let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
        out.push_str(&"-".repeat(rule));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(&r.label, &r.cells));
            out.push('\n');
        }
        out
    }
}

/// `count (pct%)` with round-half-up: integer percent at or above 10%, one
/// decimal below it, and a bare `0%` for zero.
pub fn count_with_percent(count: usize, total: usize) -> String {
    if total == 0 {
        return format!("{count}");
    }
    if count == 0 {
        return "0 (0%)".to_string();
    }
    let (c, t) = (count as u128, total as u128);
    // tenths of a percent, rounded half up
    let tenths = (c * 2000 + t) / (2 * t);
    if tenths >= 100 {
        let whole = (c * 200 + t) / (2 * t);
        format!("{count} ({whole}%)")
    } else {
        format!("{count} ({}.{}%)", tenths / 10, tenths % 10)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ApproachCodes {
    pub name: String,
    pub code_ids: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationInput {
    pub approaches: Vec<ApproachCodes>,
    pub groundedness: BTreeMap<String, Groundedness>,
    pub breadth: BTreeMap<String, Breadth>,
}

pub fn table2(input: &ValidationInput) -> ReportTable {
    let rows = input
        .approaches
        .iter()
        .map(|a| {
            let n = a.code_ids.len();
            let labelled = |m: &dyn Fn(&String) -> Option<bool>| {
                let judged: Vec<bool> = a.code_ids.iter().filter_map(m).collect();
                if judged.is_empty() {
                    String::new()
                } else {
                    count_with_percent(judged.iter().filter(|b| **b).count(), n)
                }
            };
            let ungrounded = labelled(&|id| {
                input
                    .groundedness
                    .get(id)
                    .map(|g| *g == Groundedness::Ungrounded)
            });
            let broad = labelled(&|id| input.breadth.get(id).map(|b| *b == Breadth::OverlyBroad));
            ReportRow {
                label: a.name.clone(),
                cells: vec![n.to_string(), ungrounded, broad],
            }
        })
        .collect();
    ReportTable {
        table: 2,
        title: "Open codes per approach with validation results".into(),
        columns: vec![
            "Approach".into(),
            "# Codes".into(),
            "# Ungrounded".into(),
            "# Overly Broad".into(),
        ],
        rows,
    }
}

fn get<K: Ord>(m: &BTreeMap<Option<K>, usize>, k: Option<K>) -> usize {
    m.get(&k).copied().unwrap_or(0)
}

pub fn table4(u: &UniqueCoverage) -> ReportTable {
    let has_unlabelled = get(&u.total_by_gain, None) > 0;
    let mut columns: Vec<String> = vec![
        "Group".into(),
        "# Uniquely Covered".into(),
        "Little Gain".into(),
        "Minor Gain".into(),
        "Substantial Gain".into(),
    ];
    if has_unlabelled {
        columns.push("Unlabeled".into());
    }
    let row = |label: &str, unique: usize, by_gain: &BTreeMap<Option<Gain>, usize>| {
        let mut cells = vec![
            unique.to_string(),
            get(by_gain, Some(Gain::Little)).to_string(),
            get(by_gain, Some(Gain::Minor)).to_string(),
            get(by_gain, Some(Gain::Substantial)).to_string(),
        ];
        if has_unlabelled {
            cells.push(get(by_gain, None).to_string());
        }
        ReportRow {
            label: label.to_string(),
            cells,
        }
    };
    let mut rows = Vec::new();
    if !u.groups.is_empty() {
        rows.push(row("Total", u.total_unique, &u.total_by_gain));
        for g in &u.groups {
            rows.push(row(&g.name, g.unique, &g.by_gain));
        }
    }
    ReportTable {
        table: 4,
        title: "Uniquely covered merged codes by gain".into(),
        columns,
        rows,
    }
}

pub fn table5(u: &UniqueCoverage) -> ReportTable {
    let row = |label: &str, by_source: &BTreeMap<Option<Source>, usize>| {
        let total: usize = by_source.values().sum();
        ReportRow {
            label: label.to_string(),
            cells: vec![
                total.to_string(),
                get(by_source, Some(Source::Content)).to_string(),
                get(by_source, Some(Source::ConversationalDynamics)).to_string(),
            ],
        }
    };
    let mut rows = Vec::new();
    if !u.groups.is_empty() {
        rows.push(row("Total", &u.total_substantial_by_source));
        for g in &u.groups {
            rows.push(row(&g.name, &g.substantial_by_source));
        }
    }
    ReportTable {
        table: 5,
        title: "Sources of substantial-gain codes".into(),
        columns: vec![
            "Group".into(),
            "# Substantial Gain".into(),
            "From Content".into(),
            "From Conversational Dynamics".into(),
        ],
        rows,
    }
}
