use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::Corpus;
use crate::error::{DebiasError, Result};
use crate::linalg::{self, Matrix};

use super::BaseEmbeddings;

/// Provider string as written in configs: `"file:<path>"` or `"hash"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    File(String),
    Hash,
}

impl ProviderSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        if let Some(path) = spec.strip_prefix("file:") {
            if path.is_empty() {
                return Err(DebiasError::UnknownProvider(spec.into()));
            }
            Ok(Self::File(path.into()))
        } else if spec == "hash" {
            Ok(Self::Hash)
        } else {
            Err(DebiasError::UnknownProvider(spec.into()))
        }
    }
}

/// A resolved provider: a loaded matrix or the built-in hashing embedder.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingSource {
    Precomputed(Matrix),
    Hash { dim: usize, seed: u64 },
}

pub fn embed_base(corpus: &Corpus, source: &EmbeddingSource) -> Result<BaseEmbeddings> {
    match source {
        EmbeddingSource::Precomputed(m) => {
            if m.rows() != corpus.len() {
                return Err(DebiasError::ShapeMismatch {
                    what: "embedding rows vs corpus samples",
                    expected: corpus.len(),
                    actual: m.rows(),
                });
            }
            BaseEmbeddings::new(m.clone())
        }
        &EmbeddingSource::Hash { dim, seed } => {
            if dim == 0 {
                return Err(DebiasError::InvalidConfig("hash embedding dim must be positive".into()));
            }
            let mut m = Matrix::zeros(corpus.len(), dim);
            for (r, sentence) in corpus.sentences()?.iter().enumerate() {
                m.row_mut(r).copy_from_slice(&hash_embed(sentence, dim, seed));
            }
            BaseEmbeddings::new(m)
        }
    }
}

fn fnv1a(seed: u64, parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            h ^= 0x1f;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        for b in part.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    // final avalanche (splitmix64 finalizer)
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Signed feature hashing of lowercase word unigrams and bigrams, L2
/// normalized. Pure integer hashing, so rows are identical on every
/// platform.
pub fn hash_embed(sentence: &str, dim: usize, seed: u64) -> Vec<f64> {
    let lower = sentence.to_lowercase();
    let tokens: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect();
    let mut v = alloc::vec![0.0; dim];
    let mut add = |h: u64| {
        let bucket = (h % dim as u64) as usize;
        v[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    };
    for t in &tokens {
        add(fnv1a(seed, &[t]));
    }
    for w in tokens.windows(2) {
        add(fnv1a(seed, &[w[0], w[1]]));
    }
    linalg::normalize(&mut v);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provider_parsing() {
        assert_eq!(ProviderSpec::parse("hash").unwrap(), ProviderSpec::Hash);
        assert_eq!(
            ProviderSpec::parse("file:emb.ptns").unwrap(),
            ProviderSpec::File("emb.ptns".into())
        );
        assert!(matches!(ProviderSpec::parse("bert"), Err(DebiasError::UnknownProvider(_))));
        assert!(ProviderSpec::parse("file:").is_err());
    }

    #[test]
    fn hash_is_deterministic() {
        let a = hash_embed("The person is standing on the road.", 64, 1);
        let b = hash_embed("The person is standing on the road.", 64, 1);
        assert_eq!(a, b);
        let c = hash_embed("The dog is standing on the road.", 64, 1);
        assert!(a.iter().zip(&c).any(|(x, y)| x != y));
        assert!((linalg::norm(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hash_golden() {
        // Frozen after the first verified run; guards platform/version drift.
        let v = hash_embed("The person is standing on the road.", 16, 0);
        let nonzero: Vec<(usize, f64)> = v
            .iter()
            .enumerate()
            .filter(|(_, x)| **x != 0.0)
            .map(|(i, x)| (i, *x))
            .collect();
        assert_eq!(nonzero, GOLDEN.to_vec());
    }

    const GOLDEN: [(usize, f64); 7] = [
        (0, 0.5547001962252291),
        (2, 0.2773500981126146),
        (4, -0.2773500981126146),
        (5, -0.2773500981126146),
        (6, -0.2773500981126146),
        (7, -0.2773500981126146),
        (13, 0.5547001962252291),
    ];
}
