//! Run configuration, read from a TOML file.
//!
//! ```toml
//! kb = "kb.jsonl"              # paths are relative to this file
//! tables = "tables.jsonl"
//! questions = "questions.jsonl"
//! output = "out"
//! index_dir = "out/index"      # load persisted indexes instead of building
//! seed = 0
//! retriever = "multistage"     # multistage | bi_encoder | cross_encoder | string_match | random
//! excluded_datatypes = ["globe-coordinate", "url"]
//!
//! [retrieval]                  # first_stage_n, top_k, hash_dim
//! [embedding]                  # kind = "hashing" | "linear" | "remote"; model; url; dim
//! [scorer]                     # kind = "lexical" | "remote"; url
//! [generation]                 # url; max_tokens; temperature; char_budget
//! [dataset]                    # strategy = "knn" | "random"; n
//! [train]                      # epochs; batch_size; learning_rate; hash_dim
//! [http]                       # timeout_secs; retries
//! ```
//!
//! `KBTQA_EMBEDDING_URL`, `KBTQA_SCORER_URL` and `KBTQA_GENERATION_URL`
//! override the endpoints; setting the first two also switches that
//! component to its remote kind.

use std::path::{Path, PathBuf};

use kbtqa_core::dataset::NegativeStrategy;
use kbtqa_core::retrieve::RetrieverConfig;
use kbtqa_core::train::TrainConfig;
use serde::Deserialize;

use crate::error::CliError;

pub const ENV_EMBEDDING_URL: &str = "KBTQA_EMBEDDING_URL";
pub const ENV_SCORER_URL: &str = "KBTQA_SCORER_URL";
pub const ENV_GENERATION_URL: &str = "KBTQA_GENERATION_URL";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum RetrieverKind {
    #[default]
    Multistage,
    BiEncoder,
    CrossEncoder,
    StringMatch,
    Random,
}

impl RetrieverKind {
    pub fn needs_index(self) -> bool {
        matches!(self, RetrieverKind::Multistage | RetrieverKind::BiEncoder)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    #[default]
    Hashing,
    Linear,
    Remote,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub kind: EmbeddingKind,
    /// Model file of a trained linear embedder.
    pub model: Option<PathBuf>,
    pub url: Option<String>,
    /// Vector width of the remote encoder; probed when absent.
    pub dim: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    #[default]
    Lexical,
    Remote,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    pub url: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub url: Option<String>,
    pub max_tokens: usize,
    pub temperature: f64,
    pub char_budget: Option<usize>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            url: None,
            max_tokens: 64,
            temperature: 0.0,
            char_budget: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub strategy: Option<NegativeStrategy>,
    pub n: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    pub timeout_secs: u64,
    /// Extra attempts after a transport error or 5xx reply.
    pub retries: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            timeout_secs: 30,
            retries: 2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub kb: Option<PathBuf>,
    pub tables: Option<PathBuf>,
    pub questions: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub index_dir: Option<PathBuf>,
    pub seed: u64,
    pub retriever: RetrieverKind,
    pub excluded_datatypes: Option<Vec<String>>,
    pub retrieval: RetrieverConfig,
    pub embedding: EmbeddingConfig,
    pub scorer: ScorerConfig,
    pub generation: GenerationConfig,
    pub dataset: DatasetSection,
    pub train: TrainConfig,
    pub http: HttpConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::new("config", e.to_string()))
    }

    /// Read `path`, resolve relative paths against its directory and apply
    /// the environment overrides.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| CliError::new("config", format!("{}: {}", path.display(), e.message)))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.kb,
            &mut self.tables,
            &mut self.questions,
            &mut self.output,
            &mut self.index_dir,
            &mut self.embedding.model,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn apply_env(&mut self) {
        self.apply_overrides(|k| std::env::var(k).ok().filter(|v| !v.is_empty()));
    }

    pub fn apply_overrides(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(u) = get(ENV_EMBEDDING_URL) {
            self.embedding.kind = EmbeddingKind::Remote;
            self.embedding.url = Some(u);
        }
        if let Some(u) = get(ENV_SCORER_URL) {
            self.scorer.kind = ScorerKind::Remote;
            self.scorer.url = Some(u);
        }
        if let Some(u) = get(ENV_GENERATION_URL) {
            self.generation.url = Some(u);
        }
    }

    pub fn excluded(&self) -> std::collections::BTreeSet<String> {
        match &self.excluded_datatypes {
            Some(v) => v.iter().cloned().collect(),
            None => kbtqa_core::kb::default_excluded_datatypes(),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("kbtqa-out"))
    }
}
