use super::{EmbeddingProvider, ProviderError};

/// Deterministic offline embedder.
///
/// Each text is lowercased and split into alphanumeric words. Every word,
/// and every character trigram of the word padded as `<word>`, is a
/// feature. A feature is hashed with seeded 64-bit FNV-1a; the hash selects
/// a dimension (`h % dim`) and a sign (top bit set means -1). The summed
/// vector is L2-normalized. Texts without any word fall back to a one-hot
/// vector chosen by hashing the raw text.
#[derive(Debug, Clone)]
pub struct StubEmbedder {
    pub seed: u64,
    pub dim: usize,
}

impl Default for StubEmbedder {
    fn default() -> Self {
        StubEmbedder { seed: 0, dim: 64 }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

impl StubEmbedder {
    pub fn features(text: &str) -> Vec<String> {
        let lower = text.to_lowercase();
        let mut out = Vec::new();
        for word in lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
        {
            out.push(word.to_string());
            let padded: Vec<char> = format!("<{word}>").chars().collect();
            for tri in padded.windows(3) {
                out.push(tri.iter().collect());
            }
        }
        out
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f64; self.dim];
        let features = Self::features(text);
        if features.is_empty() {
            let h = fnv1a(self.seed, text.as_bytes());
            v[(h % self.dim as u64) as usize] = 1.0;
        }
        for f in &features {
            let h = fnv1a(self.seed, f.as_bytes());
            let idx = (h % self.dim as u64) as usize;
            v[idx] += if h >> 63 == 1 { -1.0 } else { 1.0 };
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // all features cancelled out
            let h = fnv1a(self.seed, text.as_bytes());
            v[(h % self.dim as u64) as usize] = 1.0;
            return v.into_iter().map(|x| x as f32).collect();
        }
        v.into_iter().map(|x| (x / norm) as f32).collect()
    }
}

impl EmbeddingProvider for StubEmbedder {
    fn model_id(&self) -> &str {
        "stub-hash-64"
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn is_local(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_length_and_fixed_dimension() {
        let e = StubEmbedder::default();
        for t in ["a", "manage user expectations", "!!!", ""] {
            let v = e.embed_one(t);
            assert_eq!(v.len(), 64);
            let n: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-5, "{t}: {n}");
        }
    }

    #[test]
    fn seed_changes_the_projection() {
        let a = StubEmbedder { seed: 0, dim: 64 }.embed_one("timeline");
        let b = StubEmbedder { seed: 7, dim: 64 }.embed_one("timeline");
        assert_ne!(a, b);
    }
}
