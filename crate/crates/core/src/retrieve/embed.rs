//! Embedding providers: the bi-encoder abstraction plus the feature-hashing
//! baseline used when no trained encoder is attached.

use std::marker::PhantomData;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::text::{fnv1a64, word_tokens};

/// Failure reported by an embedding provider or pair scorer.
#[derive(Debug, Clone, Error)]
#[error("{0}")]
pub struct ProviderError(pub String);

impl ProviderError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedMode {
    Query,
    Context,
}

/// Two-tower text encoder: a question tower and a context tower producing
/// `dim()`-length vectors compared by dot product.
pub trait EmbeddingProvider<S: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    /// Identifies the encoder weights; persisted indexes record it and
    /// refuse to load under a different provider.
    fn fingerprint(&self) -> String;

    fn embed(&self, text: &str, mode: EmbedMode) -> Result<Vec<S>, ProviderError>;

    fn embed_batch(&self, texts: &[String], mode: EmbedMode) -> Result<Vec<Vec<S>>, ProviderError> {
        texts.iter().map(|t| self.embed(t, mode)).collect()
    }

    fn embed_query(&self, text: &str) -> Result<Vec<S>, ProviderError> {
        self.embed(text, EmbedMode::Query)
    }

    fn embed_context(&self, text: &str) -> Result<Vec<S>, ProviderError> {
        self.embed(text, EmbedMode::Context)
    }

    /// `false` makes the serving engine funnel calls through a lock.
    fn supports_concurrent_calls(&self) -> bool {
        true
    }
}

impl<S: Scalar, P: EmbeddingProvider<S> + ?Sized> EmbeddingProvider<S> for std::sync::Arc<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }
    fn embed(&self, text: &str, mode: EmbedMode) -> Result<Vec<S>, ProviderError> {
        (**self).embed(text, mode)
    }
    fn embed_batch(&self, texts: &[String], mode: EmbedMode) -> Result<Vec<Vec<S>>, ProviderError> {
        (**self).embed_batch(texts, mode)
    }
    fn supports_concurrent_calls(&self) -> bool {
        (**self).supports_concurrent_calls()
    }
}

/// Signed feature hashing of lowercase word tokens, L2-normalized.
///
/// Each token lands in bucket `fnv1a64(token) % dim` with sign taken from
/// the hash's top bit. Query and context towers are identical. Text without
/// tokens maps to the zero vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashingEmbedder<S = f64> {
    dim: usize,
    _scalar: PhantomData<S>,
}

pub const MIN_HASH_DIM: usize = 8;

impl<S: Scalar> HashingEmbedder<S> {
    pub fn new(dim: usize) -> Result<Self, ProviderError> {
        if dim < MIN_HASH_DIM {
            return Err(ProviderError::new(format!(
                "hash dimension {dim} below minimum {MIN_HASH_DIM}"
            )));
        }
        Ok(Self {
            dim,
            _scalar: PhantomData,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Unnormalized signed term counts.
    pub fn raw_features(&self, text: &str) -> Vec<S> {
        let mut v = vec![S::zero(); self.dim];
        for tok in word_tokens(text) {
            let h = fnv1a64(tok.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            if h >> 63 == 1 {
                v[bucket] -= S::one();
            } else {
                v[bucket] += S::one();
            }
        }
        v
    }

    pub fn features(&self, text: &str) -> Vec<S> {
        let mut v = self.raw_features(text);
        let norm = crate::scalar::l2_norm(&v);
        if norm > S::zero() {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl<S: Scalar> EmbeddingProvider<S> for HashingEmbedder<S> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("hashing-fnv1a-v1:dim={}:{}", self.dim, S::TAG)
    }

    fn embed(&self, text: &str, _mode: EmbedMode) -> Result<Vec<S>, ProviderError> {
        Ok(self.features(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{dot, l2_norm};

    #[test]
    fn rejects_tiny_dims() {
        assert!(HashingEmbedder::<f64>::new(7).is_err());
        assert!(HashingEmbedder::<f64>::new(8).is_ok());
    }

    #[test]
    fn deterministic_unit_vectors() {
        let h = HashingEmbedder::<f64>::new(256).unwrap();
        let a = h.embed_query("Kanye West record label").unwrap();
        let b = h.embed_context("Kanye West record label").unwrap();
        assert_eq!(a, b);
        assert!((l2_norm(&a) - 1.0).abs() < 1e-12);
        assert_eq!(a.len(), 256);
    }

    #[test]
    fn empty_text_is_zero() {
        let h = HashingEmbedder::<f32>::new(16).unwrap();
        let v = h.embed_query(" ,, ").unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn shared_tokens_score_higher() {
        let h = HashingEmbedder::<f64>::new(256).unwrap();
        let q = h.embed_query("release date of the studio album").unwrap();
        let near = h
            .embed_context("[HEAD] The College Dropout [REL] publication date [TAIL] February 10, 2004 album")
            .unwrap();
        let far = h.embed_context("[HEAD] Jay-Z [REL] spouse [TAIL] Beyoncé").unwrap();
        assert!(dot(&q, &near) > dot(&q, &far));
    }

    #[test]
    fn f32_and_f64_agree() {
        let a = HashingEmbedder::<f32>::new(64).unwrap().raw_features("a b c a");
        let b = HashingEmbedder::<f64>::new(64).unwrap().raw_features("a b c a");
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(f64::from(*x), *y);
        }
    }
}
