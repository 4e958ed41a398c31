//! Agglomerative clustering over cosine distance.
//!
//! Used both to group messages into topics and to merge codes across
//! codebooks. Merging repeats while the closest pair of clusters is at
//! distance `<= threshold`. Ties are broken by the smallest member index,
//! so the output depends only on the input order.

use serde::{Deserialize, Serialize};

use crate::gateway::cosine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    #[default]
    Average,
    Complete,
}

impl std::str::FromStr for Linkage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "average" => Ok(Linkage::Average),
            "complete" => Ok(Linkage::Complete),
            other => Err(format!("unknown linkage {other:?} (average|complete)")),
        }
    }
}

/// Square symmetric distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    /// Cosine distances `1 - cos`. Bitwise-identical vectors are at exactly 0.
    pub fn cosine(vectors: &[Vec<f32>]) -> Self {
        let n = vectors.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = if vectors[i] == vectors[j] {
                    0.0
                } else {
                    (1.0 - cosine(&vectors[i], &vectors[j])).max(0.0)
                };
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        DistanceMatrix { n, d }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = f(i, j);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        DistanceMatrix { n, d }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.d[i * self.n + j] = v;
        self.d[j * self.n + i] = v;
    }
}

/// One agglomeration step: the clusters whose smallest members are
/// `left < right` joined at `distance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Member indices per cluster, each sorted, clusters ordered by their
    /// smallest member.
    pub clusters: Vec<Vec<usize>>,
    pub steps: Vec<MergeStep>,
}

#[derive(Clone, Copy)]
struct Nearest {
    dist: f64,
    to: usize,
}

pub fn agglomerate(matrix: &DistanceMatrix, linkage: Linkage, threshold: f64) -> Clustering {
    let n = matrix.len();
    let mut d = matrix.clone();
    let mut active = vec![true; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut steps = Vec::new();

    // nearest[i]: closest active slot j > i, smallest j on ties
    let row_min = |d: &DistanceMatrix, active: &[bool], i: usize| -> Option<Nearest> {
        let mut best: Option<Nearest> = None;
        for j in (i + 1)..n {
            if !active[j] {
                continue;
            }
            let v = d.get(i, j);
            if best.map_or(true, |b| v < b.dist) {
                best = Some(Nearest { dist: v, to: j });
            }
        }
        best
    };
    let mut nearest: Vec<Option<Nearest>> = (0..n).map(|i| row_min(&d, &active, i)).collect();

    loop {
        let mut pick: Option<(usize, Nearest)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            if let Some(nb) = nearest[i] {
                if pick.map_or(true, |(_, p)| nb.dist < p.dist) {
                    pick = Some((i, nb));
                }
            }
        }
        let Some((i, nb)) = pick else { break };
        if nb.dist > threshold {
            break;
        }
        let j = nb.to;
        let (ni, nj) = (members[i].len() as f64, members[j].len() as f64);
        for k in 0..n {
            if !active[k] || k == i || k == j {
                continue;
            }
            let v = match linkage {
                Linkage::Average => (ni * d.get(k, i) + nj * d.get(k, j)) / (ni + nj),
                Linkage::Complete => d.get(k, i).max(d.get(k, j)),
            };
            d.set(k, i, v);
        }
        active[j] = false;
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);
        members[i].sort_unstable();
        steps.push(MergeStep {
            left: i,
            right: j,
            distance: nb.dist,
            size: members[i].len(),
        });
        nearest[j] = None;
        nearest[i] = row_min(&d, &active, i);
        for k in 0..i {
            if !active[k] {
                continue;
            }
            match nearest[k] {
                Some(nk) if nk.to == i || nk.to == j => nearest[k] = row_min(&d, &active, k),
                Some(nk) => {
                    let v = d.get(k, i);
                    if v < nk.dist || (v == nk.dist && i < nk.to) {
                        nearest[k] = Some(Nearest { dist: v, to: i });
                    }
                }
                None => nearest[k] = row_min(&d, &active, k),
            }
        }
        for k in (i + 1)..j {
            if active[k] && nearest[k].is_some_and(|nk| nk.to == j) {
                nearest[k] = row_min(&d, &active, k);
            }
        }
    }

    let clusters = (0..n)
        .filter(|&i| active[i])
        .map(|i| members[i].clone())
        .collect();
    Clustering { clusters, steps }
}

/// Convenience: embed-free clustering of unit vectors.
pub fn cluster_vectors(vectors: &[Vec<f32>], linkage: Linkage, threshold: f64) -> Vec<Vec<usize>> {
    agglomerate(&DistanceMatrix::cosine(vectors), linkage, threshold).clusters
}
