//! Retriever stacks behind one trait, so the answering pipeline, the CLI and
//! the service can swap retrieval strategies.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Instant;

use super::{
    bi_encoder_retrieve, cross_encoder_rank, multistage_retrieve, random_retrieve,
    string_match_retrieve, EmbeddingProvider, PairScorer, RetrievalReport, RetrieveError,
    RetrieverConfig, ScoredTriple, TripleIndex,
};
use crate::kb::{SubGraph, Triple};
use crate::scalar::Scalar;
use crate::table::Table;
use crate::text::fnv1a64;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Retrieved {
    pub triples: Vec<ScoredTriple>,
    pub report: RetrievalReport,
}

pub trait TripleRetriever: Send + Sync {
    /// Up to `k` triples of `g` for question `q` over table `t`, best first.
    fn retrieve(&self, q: &str, t: &Table, g: &SubGraph, k: usize) -> Result<Retrieved, RetrieveError>;
}

/// Held while calling providers that cannot take concurrent calls.
struct Gate {
    lock: Option<Mutex<()>>,
}

impl Gate {
    fn new(serialize: bool) -> Self {
        Self {
            lock: serialize.then(|| Mutex::new(())),
        }
    }

    fn enter(&self) -> Option<MutexGuard<'_, ()>> {
        self.lock
            .as_ref()
            .map(|m| m.lock().unwrap_or_else(|p| p.into_inner()))
    }
}

fn index_for<'a, S>(
    indexes: &'a HashMap<String, TripleIndex<S>>,
    table_id: &str,
) -> Result<&'a TripleIndex<S>, RetrieveError> {
    indexes
        .get(table_id)
        .ok_or_else(|| RetrieveError::UnknownTable(table_id.to_string()))
}

/// Dense retrieval followed by cross-encoder re-ranking.
pub struct MultistageRetriever<S: Scalar = f64> {
    indexes: HashMap<String, TripleIndex<S>>,
    provider: Arc<dyn EmbeddingProvider<S>>,
    scorer: Arc<dyn PairScorer>,
    cfg: RetrieverConfig,
    gate: Gate,
}

impl<S: Scalar> MultistageRetriever<S> {
    pub fn new(
        indexes: HashMap<String, TripleIndex<S>>,
        provider: Arc<dyn EmbeddingProvider<S>>,
        scorer: Arc<dyn PairScorer>,
        cfg: RetrieverConfig,
    ) -> Result<Self, RetrieveError> {
        cfg.validate()?;
        let serialize = !provider.supports_concurrent_calls() || !scorer.supports_concurrent_calls();
        Ok(Self {
            indexes,
            provider,
            scorer,
            cfg,
            gate: Gate::new(serialize),
        })
    }

    pub fn config(&self) -> &RetrieverConfig {
        &self.cfg
    }

    pub fn has_table(&self, table_id: &str) -> bool {
        self.indexes.contains_key(table_id)
    }

    /// Config used for a request asking for `k` triples.
    pub fn config_for(&self, k: usize) -> RetrieverConfig {
        RetrieverConfig {
            top_k: k,
            first_stage_n: self.cfg.first_stage_n.max(k),
            ..self.cfg.clone()
        }
    }
}

impl<S: Scalar> TripleRetriever for MultistageRetriever<S> {
    fn retrieve(&self, q: &str, t: &Table, g: &SubGraph, k: usize) -> Result<Retrieved, RetrieveError> {
        let idx = index_for(&self.indexes, &t.id)?;
        let _guard = self.gate.enter();
        let (triples, report) = multistage_retrieve(
            q,
            t,
            g.labels(),
            idx,
            self.provider.as_ref(),
            self.scorer.as_ref(),
            &self.config_for(k),
        )?;
        Ok(Retrieved { triples, report })
    }
}

pub struct BiEncoderRetriever<S: Scalar = f64> {
    indexes: HashMap<String, TripleIndex<S>>,
    provider: Arc<dyn EmbeddingProvider<S>>,
    gate: Gate,
}

impl<S: Scalar> BiEncoderRetriever<S> {
    pub fn new(indexes: HashMap<String, TripleIndex<S>>, provider: Arc<dyn EmbeddingProvider<S>>) -> Self {
        let gate = Gate::new(!provider.supports_concurrent_calls());
        Self {
            indexes,
            provider,
            gate,
        }
    }
}

impl<S: Scalar> TripleRetriever for BiEncoderRetriever<S> {
    fn retrieve(&self, q: &str, t: &Table, _g: &SubGraph, k: usize) -> Result<Retrieved, RetrieveError> {
        let idx = index_for(&self.indexes, &t.id)?;
        let _guard = self.gate.enter();
        let start = Instant::now();
        let triples = bi_encoder_retrieve(q, idx, self.provider.as_ref(), k)?;
        Ok(Retrieved {
            report: RetrievalReport {
                first_stage: start.elapsed(),
                candidates: triples.len(),
                ..Default::default()
            },
            triples,
        })
    }
}

/// Cross-encoder over the whole sub-graph.
pub struct CrossEncoderRetriever {
    scorer: Arc<dyn PairScorer>,
    gate: Gate,
}

impl CrossEncoderRetriever {
    pub fn new(scorer: Arc<dyn PairScorer>) -> Self {
        let gate = Gate::new(!scorer.supports_concurrent_calls());
        Self { scorer, gate }
    }
}

impl TripleRetriever for CrossEncoderRetriever {
    fn retrieve(&self, q: &str, t: &Table, g: &SubGraph, k: usize) -> Result<Retrieved, RetrieveError> {
        if g.is_empty() {
            return Ok(Retrieved::default());
        }
        let cands: Vec<Triple> = g.triples().cloned().collect();
        let _guard = self.gate.enter();
        let start = Instant::now();
        let mut triples = cross_encoder_rank(q, t, &cands, g.labels(), self.scorer.as_ref())?;
        triples.truncate(k);
        Ok(Retrieved {
            report: RetrievalReport {
                rerank: start.elapsed(),
                candidates: cands.len(),
                ..Default::default()
            },
            triples,
        })
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct StringMatchRetriever;

impl TripleRetriever for StringMatchRetriever {
    fn retrieve(&self, q: &str, _t: &Table, g: &SubGraph, k: usize) -> Result<Retrieved, RetrieveError> {
        let start = Instant::now();
        let triples = string_match_retrieve(q, g, k)?;
        Ok(Retrieved {
            report: RetrievalReport {
                first_stage: start.elapsed(),
                candidates: g.len(),
                ..Default::default()
            },
            triples,
        })
    }
}

/// Random baseline; the draw is seeded by `seed` mixed with the question text.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomRetriever {
    pub seed: u64,
}

impl TripleRetriever for RandomRetriever {
    fn retrieve(&self, q: &str, _t: &Table, g: &SubGraph, k: usize) -> Result<Retrieved, RetrieveError> {
        let triples = random_retrieve(g, k, self.seed ^ fnv1a64(q.as_bytes()))?;
        Ok(Retrieved {
            report: RetrievalReport {
                candidates: g.len(),
                ..Default::default()
            },
            triples,
        })
    }
}
