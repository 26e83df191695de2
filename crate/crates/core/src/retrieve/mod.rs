//! Triple retrieval: bi-encoder scan over a per-table index, cross-encoder
//! re-ranking, the two-stage pipeline combining them, and the string-match
//! and random baselines.
//!
//! Every ranking is sorted by score (descending) and then by
//! [`Triple::key`] (ascending), so equal inputs always produce equal output.

mod embed;
mod index;
mod scorer;
mod stack;

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{EmbedMode, EmbeddingProvider, HashingEmbedder, ProviderError, MIN_HASH_DIM};
pub use index::{build_index, IndexEntry, TripleIndex};
pub use scorer::{FnScorer, LexicalPairScorer, PairScorer, ScorePair};
pub use stack::{
    BiEncoderRetriever, CrossEncoderRetriever, MultistageRetriever, RandomRetriever, Retrieved,
    StringMatchRetriever, TripleRetriever,
};

use crate::kb::{KbError, LabelMap, SubGraph, Triple, TripleTail};
use crate::scalar::{dot, Scalar};
use crate::serialize::{serialize_table, serialize_triple};
use crate::table::{triple_related_subtable, Table};
use crate::text::word_set;

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error("embedding provider failed on triple {key}: {message}")]
    Provider { key: String, message: String },
    #[error("embedding provider failed: {0}")]
    Query(#[source] ProviderError),
    #[error("pair scorer failed: {0}")]
    Scorer(String),
    #[error("sub-graph is empty")]
    EmptySubGraph,
    #[error("no candidates to rank")]
    NoCandidates,
    #[error("invalid retriever config: {0}")]
    Config(String),
    #[error("index fingerprint {found:?} does not match provider {expected:?}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("query vector has length {got}, index expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("no index for table {0}")]
    UnknownTable(String),
    #[error("index file: {0}")]
    IndexFormat(String),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which stage produced a score. Scores of different stages are on
/// different scales and never mixed in one ranking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    BiEncoder,
    CrossEncoder,
    StringMatch,
    Random,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::BiEncoder => "bi_encoder",
            Stage::CrossEncoder => "cross_encoder",
            Stage::StringMatch => "string_match",
            Stage::Random => "random",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredTriple {
    pub triple: Triple,
    pub key: String,
    pub score: f64,
    pub stage: Stage,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieverConfig {
    /// Bi-encoder candidates handed to the re-ranker.
    pub first_stage_n: usize,
    pub top_k: usize,
    pub hash_dim: usize,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            first_stage_n: 200,
            top_k: 20,
            hash_dim: 256,
        }
    }
}

impl RetrieverConfig {
    pub fn validate(&self) -> Result<(), RetrieveError> {
        if self.top_k == 0 || self.top_k > self.first_stage_n {
            return Err(RetrieveError::Config(format!(
                "need 1 <= top_k ({}) <= first_stage_n ({})",
                self.top_k, self.first_stage_n
            )));
        }
        if self.hash_dim < MIN_HASH_DIM {
            return Err(RetrieveError::Config(format!(
                "hash_dim {} below {MIN_HASH_DIM}",
                self.hash_dim
            )));
        }
        Ok(())
    }
}

/// Wall-clock timings of one retrieval call.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RetrievalReport {
    pub first_stage: Duration,
    pub rerank: Duration,
    pub candidates: usize,
}

/// Total order used by every ranking: score descending, then key ascending.
pub fn rank_order(a_score: f64, a_key: &str, b_score: f64, b_key: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_key.cmp(b_key))
}

/// Sort `(triple, key, score)` rows and keep the first `k`.
pub(crate) fn rank(mut rows: Vec<(Triple, String, f64)>, k: usize, stage: Stage) -> Vec<ScoredTriple> {
    let cmp = |a: &(Triple, String, f64), b: &(Triple, String, f64)| rank_order(a.2, &a.1, b.2, &b.1);
    if k < rows.len() {
        if k > 0 {
            rows.select_nth_unstable_by(k - 1, cmp);
        }
        rows.truncate(k);
    }
    rows.sort_by(cmp);
    rows.into_iter()
        .map(|(triple, key, score)| ScoredTriple {
            triple,
            key,
            score,
            stage,
        })
        .collect()
}

/// Top-`k` index entries by `embed_query(q) · context_vector`.
pub fn bi_encoder_retrieve<S, P>(
    q: &str,
    idx: &TripleIndex<S>,
    provider: &P,
    k: usize,
) -> Result<Vec<ScoredTriple>, RetrieveError>
where
    S: Scalar,
    P: EmbeddingProvider<S> + ?Sized,
{
    if k == 0 {
        return Err(RetrieveError::Config("k must be >= 1".into()));
    }
    let fp = provider.fingerprint();
    if fp != idx.fingerprint {
        return Err(RetrieveError::FingerprintMismatch {
            expected: fp,
            found: idx.fingerprint.clone(),
        });
    }
    let qv = provider.embed_query(q).map_err(RetrieveError::Query)?;
    if qv.len() != idx.dim {
        return Err(RetrieveError::DimMismatch {
            expected: idx.dim,
            got: qv.len(),
        });
    }
    let rows = idx
        .entries
        .iter()
        .map(|e| (e.triple.clone(), e.key.clone(), dot(&qv, &e.vector).to_f64_lossy()))
        .collect();
    Ok(rank(rows, k, Stage::BiEncoder))
}

/// Re-score every candidate jointly with its triple-related sub-table.
pub fn cross_encoder_rank<P: PairScorer + ?Sized>(
    q: &str,
    t: &Table,
    cands: &[Triple],
    labels: &LabelMap,
    scorer: &P,
) -> Result<Vec<ScoredTriple>, RetrieveError> {
    if cands.is_empty() {
        return Err(RetrieveError::NoCandidates);
    }
    let mut pairs = Vec::with_capacity(cands.len());
    for c in cands {
        pairs.push(ScorePair {
            question: q.to_string(),
            table: serialize_table(&triple_related_subtable(t, c)).text,
            triple: serialize_triple(c, labels)?.text,
        });
    }
    let scores = scorer
        .score_batch(&pairs)
        .map_err(|e| RetrieveError::Scorer(e.0))?;
    if scores.len() != cands.len() {
        return Err(RetrieveError::Scorer(format!(
            "{} scores for {} pairs",
            scores.len(),
            cands.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(RetrieveError::Scorer(format!("score {bad} outside [0, 1]")));
    }
    let rows = cands
        .iter()
        .zip(scores)
        .map(|(c, s)| (c.clone(), c.key(), s))
        .collect::<Vec<_>>();
    let n = rows.len();
    Ok(rank(rows, n, Stage::CrossEncoder))
}

/// Bi-encoder top `first_stage_n`, re-ranked by the pair scorer, cut to `top_k`.
pub fn multistage_retrieve<S, P, C>(
    q: &str,
    t: &Table,
    labels: &LabelMap,
    idx: &TripleIndex<S>,
    provider: &P,
    scorer: &C,
    cfg: &RetrieverConfig,
) -> Result<(Vec<ScoredTriple>, RetrievalReport), RetrieveError>
where
    S: Scalar,
    P: EmbeddingProvider<S> + ?Sized,
    C: PairScorer + ?Sized,
{
    cfg.validate()?;
    let start = Instant::now();
    let first = bi_encoder_retrieve(q, idx, provider, cfg.first_stage_n)?;
    let first_stage = start.elapsed();
    let mut report = RetrievalReport {
        first_stage,
        rerank: Duration::ZERO,
        candidates: first.len(),
    };
    if first.is_empty() {
        return Ok((first, report));
    }
    let cands: Vec<Triple> = first.into_iter().map(|s| s.triple).collect();
    let start = Instant::now();
    let mut ranked = cross_encoder_rank(q, t, &cands, labels, scorer)?;
    report.rerank = start.elapsed();
    ranked.truncate(cfg.top_k);
    Ok((ranked, report))
}

/// Words of the property label plus the tail label (relational) or value (attribute).
fn match_words(tr: &Triple, labels: &LabelMap) -> Result<BTreeSet<String>, KbError> {
    let mut words = word_set(labels.require(tr.property.as_str())?);
    let tail = match &tr.tail {
        TripleTail::Entity(e) => labels.require(e.as_str())?,
        TripleTail::Literal { text, .. } => text.as_str(),
    };
    words.extend(word_set(tail));
    Ok(words)
}

/// Baseline: number of distinct question words shared with the property and tail labels.
pub fn string_match_retrieve(q: &str, g: &SubGraph, k: usize) -> Result<Vec<ScoredTriple>, RetrieveError> {
    if k == 0 {
        return Err(RetrieveError::Config("k must be >= 1".into()));
    }
    let qw = word_set(q);
    let mut rows = Vec::with_capacity(g.len());
    for tr in g.triples() {
        let score = match_words(tr, g.labels())?.intersection(&qw).count() as f64;
        rows.push((tr.clone(), tr.key(), score));
    }
    Ok(rank(rows, k, Stage::StringMatch))
}

/// Baseline: `min(k, |g|)` triples drawn uniformly without replacement.
///
/// Scores decrease with draw order (`(n - i) / n`), keeping the
/// non-increasing score contract.
pub fn random_retrieve(g: &SubGraph, k: usize, seed: u64) -> Result<Vec<ScoredTriple>, RetrieveError> {
    if k == 0 {
        return Err(RetrieveError::Config("k must be >= 1".into()));
    }
    let all: Vec<&Triple> = g.triples().collect();
    let n = k.min(all.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, all.len(), n);
    Ok(picked
        .iter()
        .enumerate()
        .map(|(i, j)| ScoredTriple {
            triple: all[j].clone(),
            key: all[j].key(),
            score: (n - i) as f64 / n as f64,
            stage: Stage::Random,
        })
        .collect())
}
