//! Deterministic text embeddings for nearest-neighbor work. The default is a
//! hashed character-trigram vector: dependency-free, stable across runs, and
//! close enough for near-duplicate strings.

/// Deterministic map from text to a fixed-dimension vector.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f32>;
}

/// Character trigrams of the lowercased text hashed into buckets, then
/// L2-normalized. Strings shorter than three characters hash as one gram.
#[derive(Debug, Clone)]
pub struct TrigramEmbedder {
    dimension: usize,
}

pub const DEFAULT_EMBEDDING_DIM: usize = 256;

impl TrigramEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        TrigramEmbedder { dimension }
    }
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_EMBEDDING_DIM)
    }
}

/// FNV-1a, used for bucketing; stable across platforms unlike DefaultHasher.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl Embedder for TrigramEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Vec<f32> {
        let mut vector = vec![0.0f32; self.dimension];
        let lowered = text.to_lowercase();
        let chars: Vec<char> = lowered.chars().collect();
        let mut bump = |gram: &[char]| {
            let gram: String = gram.iter().collect();
            let bucket = (fnv1a(gram.as_bytes()) % self.dimension as u64) as usize;
            vector[bucket] += 1.0;
        };
        if chars.len() < 3 {
            if !chars.is_empty() {
                bump(&chars);
            }
        } else {
            for window in chars.windows(3) {
                bump(window);
            }
        }
        let norm = vector.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 0.0 {
            for v in &mut vector {
                *v /= norm;
            }
        }
        vector
    }
}

/// Euclidean distance, accumulated in f64 for stable comparisons.
pub fn l2_distance(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = f64::from(x - y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_is_deterministic() {
        let embedder = TrigramEmbedder::default();
        let a = embedder.embed("Tom Tom Restaurant, 113 Horatio St.");
        let b = embedder.embed("Tom Tom Restaurant, 113 Horatio St.");
        assert_eq!(a, b);
        assert_eq!(a.len(), DEFAULT_EMBEDDING_DIM);
    }

    #[test]
    fn embedding_is_unit_length() {
        let embedder = TrigramEmbedder::default();
        let v = embedder.embed("hello world");
        let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
    }

    #[test]
    fn near_duplicates_are_closer_than_strangers() {
        let embedder = TrigramEmbedder::default();
        let base = embedder.embed("second avenue deli 156 2nd ave. at 10th st. new york");
        let near = embedder.embed("second avenue deli 156 second ave. new york");
        let far = embedder.embed("matsuhisa 129 n. la cienega blvd. beverly hills");
        assert!(l2_distance(&base, &near) < l2_distance(&base, &far));
    }

    #[test]
    fn short_and_empty_strings_embed() {
        let embedder = TrigramEmbedder::default();
        assert!(embedder.embed("").iter().all(|&v| v == 0.0));
        let ab = embedder.embed("ab");
        assert!(ab.iter().any(|&v| v > 0.0));
    }

    #[test]
    fn case_is_folded() {
        let embedder = TrigramEmbedder::default();
        assert_eq!(embedder.embed("Tom Tom"), embedder.embed("tom tom"));
    }
}
