//! Turning a [`Config`] into loaded data, providers and a retriever.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use kbtqa_core::corpus::Corpus;
use kbtqa_core::retrieve::{
    build_index, BiEncoderRetriever, CrossEncoderRetriever, EmbeddingProvider, HashingEmbedder, LexicalPairScorer,
    MultistageRetriever, PairScorer, RandomRetriever, StringMatchRetriever, TripleIndex, TripleRetriever,
};
use kbtqa_core::train::LinearEmbedder;
use serde::{Deserialize, Serialize};

use crate::config::{Config, EmbeddingKind, RetrieverKind, ScorerKind};
use crate::error::CliError;
use crate::remote::{RemoteEmbedder, RemoteScorer};

pub const MANIFEST: &str = "manifest.json";

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::new("config", format!("no {what} path (set it in the config or pass --{what})")))
}

/// KB, tables and (when configured) questions.
pub fn load_corpus(cfg: &Config) -> Result<Corpus, CliError> {
    Ok(Corpus::load(
        required(&cfg.kb, "kb")?,
        required(&cfg.tables, "tables")?,
        cfg.questions.as_deref(),
        &cfg.excluded(),
    )?)
}

pub fn require_questions(cfg: &Config, corpus: &Corpus) -> Result<(), CliError> {
    required(&cfg.questions, "questions")?;
    if corpus.questions.is_empty() {
        return Err(CliError::new("input", "questions file is empty"));
    }
    Ok(())
}

pub fn build_provider(cfg: &Config) -> Result<Arc<dyn EmbeddingProvider<f64>>, CliError> {
    Ok(match cfg.embedding.kind {
        EmbeddingKind::Hashing => Arc::new(HashingEmbedder::<f64>::new(cfg.retrieval.hash_dim)?),
        EmbeddingKind::Linear => {
            let path = required(&cfg.embedding.model, "model")?;
            Arc::new(LinearEmbedder::<f64>::load(path)?)
        }
        EmbeddingKind::Remote => {
            let url = cfg
                .embedding
                .url
                .as_deref()
                .ok_or_else(|| CliError::new("config", "remote embedding needs a url"))?;
            Arc::new(RemoteEmbedder::new(url, cfg.embedding.dim, &cfg.http)?)
        }
    })
}

pub fn build_scorer(cfg: &Config) -> Result<Arc<dyn PairScorer>, CliError> {
    Ok(match cfg.scorer.kind {
        ScorerKind::Lexical => Arc::new(LexicalPairScorer),
        ScorerKind::Remote => {
            let url = cfg
                .scorer
                .url
                .as_deref()
                .ok_or_else(|| CliError::new("config", "remote scorer needs a url"))?;
            Arc::new(RemoteScorer::new(url, &cfg.http)?)
        }
    })
}

/// Index of every table with a non-empty sub-graph.
pub fn build_indexes(
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider<f64>,
) -> Result<HashMap<String, TripleIndex<f64>>, CliError> {
    let mut out = HashMap::new();
    for (id, t) in &corpus.tables {
        let g = &corpus.graphs[id];
        if g.is_empty() {
            log::warn!("table {id}: empty sub-graph, not indexed");
            continue;
        }
        out.insert(id.clone(), build_index(g, t, provider)?);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub fingerprint: String,
    /// Table id to file name inside the index directory.
    pub tables: BTreeMap<String, String>,
}

pub fn write_indexes(dir: &Path, indexes: &HashMap<String, TripleIndex<f64>>, fingerprint: &str) -> Result<Manifest, CliError> {
    std::fs::create_dir_all(dir)?;
    let ids: std::collections::BTreeSet<&String> = indexes.keys().collect();
    let mut manifest = Manifest {
        fingerprint: fingerprint.to_string(),
        tables: BTreeMap::new(),
    };
    for (i, id) in ids.into_iter().enumerate() {
        let file = format!("t{i:05}.idx");
        indexes[id].save(&dir.join(&file))?;
        manifest.tables.insert(id.clone(), file);
    }
    std::fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Indexes persisted by `index`; each must match the provider's fingerprint.
pub fn load_indexes(dir: &Path, provider: &dyn EmbeddingProvider<f64>) -> Result<HashMap<String, TripleIndex<f64>>, CliError> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read(&path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    let fp = provider.fingerprint();
    let mut out = HashMap::new();
    for (id, file) in manifest.tables {
        out.insert(id, TripleIndex::load(&dir.join(file), Some(&fp))?);
    }
    Ok(out)
}

pub fn indexes_for(
    cfg: &Config,
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider<f64>,
) -> Result<HashMap<String, TripleIndex<f64>>, CliError> {
    match &cfg.index_dir {
        Some(dir) => load_indexes(dir, provider),
        None => build_indexes(corpus, provider),
    }
}

pub fn build_retriever(cfg: &Config, kind: RetrieverKind, corpus: &Corpus) -> Result<Box<dyn TripleRetriever>, CliError> {
    Ok(match kind {
        RetrieverKind::Multistage => {
            let provider = build_provider(cfg)?;
            let idx = indexes_for(cfg, corpus, provider.as_ref())?;
            Box::new(MultistageRetriever::new(idx, provider, build_scorer(cfg)?, cfg.retrieval.clone())?)
        }
        RetrieverKind::BiEncoder => {
            let provider = build_provider(cfg)?;
            let idx = indexes_for(cfg, corpus, provider.as_ref())?;
            Box::new(BiEncoderRetriever::new(idx, provider))
        }
        RetrieverKind::CrossEncoder => Box::new(CrossEncoderRetriever::new(build_scorer(cfg)?)),
        RetrieverKind::StringMatch => Box::new(StringMatchRetriever),
        RetrieverKind::Random => Box::new(RandomRetriever { seed: cfg.seed }),
    })
}
