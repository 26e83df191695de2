//! Cross-encoder abstraction: a joint scorer over (question, table, triple).

use serde::{Deserialize, Serialize};

use super::embed::ProviderError;
use crate::text::word_set;

/// One scorer input, field names matching the `/score` wire contract.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorePair {
    pub question: String,
    pub table: String,
    pub triple: String,
}

/// Produces a relevance score in `[0, 1]` for each pair.
pub trait PairScorer: Send + Sync {
    fn score_batch(&self, pairs: &[ScorePair]) -> Result<Vec<f64>, ProviderError>;

    fn score(&self, question: &str, table: &str, triple: &str) -> Result<f64, ProviderError> {
        let pair = ScorePair {
            question: question.to_string(),
            table: table.to_string(),
            triple: triple.to_string(),
        };
        self.score_batch(std::slice::from_ref(&pair))?
            .pop()
            .ok_or_else(|| ProviderError::new("scorer returned no score"))
    }

    fn supports_concurrent_calls(&self) -> bool {
        true
    }
}

impl<P: PairScorer + ?Sized> PairScorer for std::sync::Arc<P> {
    fn score_batch(&self, pairs: &[ScorePair]) -> Result<Vec<f64>, ProviderError> {
        (**self).score_batch(pairs)
    }
    fn supports_concurrent_calls(&self) -> bool {
        (**self).supports_concurrent_calls()
    }
}

/// Word-overlap scorer usable without a model.
///
/// `(2·|Q ∩ triple| + |Q ∩ table|) / (3·|Q|)` over distinct lowercase words,
/// so triple overlap counts double and the result stays in `[0, 1]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct LexicalPairScorer;

impl LexicalPairScorer {
    fn score_one(p: &ScorePair) -> f64 {
        let q = word_set(&p.question);
        if q.is_empty() {
            return 0.0;
        }
        let tr = word_set(&p.triple);
        let tb = word_set(&p.table);
        let a = q.intersection(&tr).count() as f64;
        let b = q.intersection(&tb).count() as f64;
        (2.0 * a + b) / (3.0 * q.len() as f64)
    }
}

impl PairScorer for LexicalPairScorer {
    fn score_batch(&self, pairs: &[ScorePair]) -> Result<Vec<f64>, ProviderError> {
        Ok(pairs.iter().map(Self::score_one).collect())
    }
}

/// Wraps a closure; handy for fixtures and oracle scorers.
pub struct FnScorer<F>(pub F);

impl<F> PairScorer for FnScorer<F>
where
    F: Fn(&ScorePair) -> f64 + Send + Sync,
{
    fn score_batch(&self, pairs: &[ScorePair]) -> Result<Vec<f64>, ProviderError> {
        Ok(pairs.iter().map(&self.0).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexical_bounds() {
        let s = LexicalPairScorer;
        assert_eq!(s.score("", "x", "y").unwrap(), 0.0);
        assert_eq!(s.score("a b", "a b", "a b").unwrap(), 1.0);
        let mid = s.score("record label", "col : x", "[HEAD] k [REL] record label [TAIL] g").unwrap();
        assert!((mid - 2.0 / 3.0).abs() < 1e-12);
    }
}
