use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ReviewError;

/// A sampled, ordered list of merged codes to judge, split into rounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewSession {
    pub id: String,
    pub merged_code_ids: Vec<String>,
    pub seed: u64,
    pub blind: bool,
    pub reviewers: Vec<String>,
    /// 1-based inclusive position ranges.
    pub rounds: Vec<(usize, usize)>,
    /// Codebooks each merged code is judged against.
    pub coder_ids: Vec<String>,
}

impl ReviewSession {
    /// 1-based round holding 1-based `position`.
    pub fn round_of(&self, position: usize) -> Option<usize> {
        self.rounds
            .iter()
            .position(|&(a, b)| a <= position && position <= b)
            .map(|r| r + 1)
    }

    pub fn position_of(&self, merged_code_id: &str) -> Option<usize> {
        self.merged_code_ids
            .iter()
            .position(|m| m == merged_code_id)
            .map(|p| p + 1)
    }

    /// Merged code ids in a 1-based round.
    pub fn round_items(&self, round: usize) -> Result<&[String], ReviewError> {
        let &(a, b) = round
            .checked_sub(1)
            .and_then(|r| self.rounds.get(r))
            .ok_or(ReviewError::UnknownRound(round))?;
        Ok(&self.merged_code_ids[a - 1..b])
    }

    pub fn has_reviewer(&self, reviewer: &str) -> bool {
        self.reviewers.iter().any(|r| r == reviewer)
    }
}

/// Request body for creating a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    #[serde(default)]
    pub id: Option<String>,
    pub sample_size: usize,
    pub seed: u64,
    #[serde(default = "yes")]
    pub blind: bool,
    pub reviewers: Vec<String>,
    /// Defaults to a single round over the whole sample.
    #[serde(default)]
    pub rounds: Option<Vec<(usize, usize)>>,
    /// Defaults to every codebook in the merge.
    #[serde(default)]
    pub coder_ids: Option<Vec<String>>,
}

fn yes() -> bool {
    true
}

/// Uniform sample without replacement, in seeded random order.
pub fn sample_ids(population: &[String], size: usize, seed: u64) -> Result<Vec<String>, ReviewError> {
    if size > population.len() {
        return Err(ReviewError::SampleTooLarge {
            requested: size,
            population: population.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<String> = population.choose_multiple(&mut rng, size).cloned().collect();
    picked.shuffle(&mut rng);
    Ok(picked)
}

/// Rounds must tile `1..=n` in order without gaps or overlaps.
pub fn check_rounds(rounds: &[(usize, usize)], n: usize) -> Result<(), ReviewError> {
    let mut next = 1;
    for &(a, b) in rounds {
        if a != next || b < a {
            return Err(ReviewError::BadRounds(format!(
                "round ({a}, {b}) does not start at {next}"
            )));
        }
        next = b + 1;
    }
    if next != n + 1 {
        return Err(ReviewError::BadRounds(format!(
            "rounds cover 1..{} but the sample has {n} items",
            next - 1
        )));
    }
    Ok(())
}

/// One reviewer's judgment of whether a codebook covers a merged code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageDecision {
    /// Taken from the request path when omitted.
    #[serde(default)]
    pub session_id: String,
    pub merged_code_id: String,
    pub reviewer: String,
    pub coder_id: String,
    pub covered: bool,
    #[serde(default)]
    pub memo: String,
    /// Filled from the item's position when sent as 0.
    #[serde(default)]
    pub round: usize,
    #[serde(default)]
    pub is_consensus: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pop(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("m{i:04}")).collect()
    }

    #[test]
    fn sampling_is_seeded_and_without_replacement() {
        let p = pop(315);
        let a = sample_ids(&p, 81, 7).unwrap();
        assert_eq!(a.len(), 81);
        assert_eq!(a, sample_ids(&p, 81, 7).unwrap());
        assert_ne!(a, sample_ids(&p, 81, 8).unwrap());
        let mut d = a.clone();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 81);
        // order is shuffled, not population order
        assert_ne!(a, d);
    }

    #[test]
    fn oversized_sample_is_rejected() {
        assert!(matches!(
            sample_ids(&pop(5), 10, 1),
            Err(ReviewError::SampleTooLarge { requested: 10, population: 5 })
        ));
        assert_eq!(sample_ids(&pop(5), 5, 1).unwrap().len(), 5);
    }

    #[test]
    fn rounds_tile_the_sample() {
        assert!(check_rounds(&[(1, 20), (21, 40), (41, 81)], 81).is_ok());
        assert!(check_rounds(&[(1, 20), (22, 81)], 81).is_err());
        assert!(check_rounds(&[(1, 20), (21, 80)], 81).is_err());
        assert!(check_rounds(&[(1, 0)], 0).is_err());
        assert!(check_rounds(&[], 0).is_ok());
    }

    #[test]
    fn positions_map_to_rounds() {
        let s = ReviewSession {
            id: "s1".into(),
            merged_code_ids: pop(81),
            seed: 0,
            blind: true,
            reviewers: vec!["a".into(), "b".into()],
            rounds: vec![(1, 20), (21, 40), (41, 81)],
            coder_ids: vec![],
        };
        assert_eq!(s.round_of(1), Some(1));
        assert_eq!(s.round_of(40), Some(2));
        assert_eq!(s.round_of(81), Some(3));
        assert_eq!(s.round_of(82), None);
        assert_eq!(s.round_items(2).unwrap().len(), 20);
        assert!(matches!(s.round_items(4), Err(ReviewError::UnknownRound(4))));
        assert!(matches!(s.round_items(0), Err(ReviewError::UnknownRound(0))));
    }
}
