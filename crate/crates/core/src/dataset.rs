//! Retrieval training data (gold positives plus sampled negatives), question
//! filters, annotation validation and train/dev/test splitting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{kb_surface_forms, normalize_answer};
use crate::kb::{KbError, LabelMap, SubGraph, Triple};
use crate::retrieve::{rank_order, EmbeddingProvider, ProviderError};
use crate::scalar::{dot, Scalar};
use crate::serialize::serialize_triple;
use crate::table::{AnswerSource, Question, Table};
use crate::text::{fnv1a64, word_set, word_tokens};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("sub-graph is empty")]
    EmptySubGraph,
    #[error("embedding provider failed on {key}: {source}")]
    Provider {
        key: String,
        #[source]
        source: ProviderError,
    },
    #[error("kNN negative sampling needs an embedding provider")]
    MissingProvider,
    #[error("{0}")]
    Config(String),
    #[error("unknown triple key {key} for table {table}")]
    UnknownTriple { table: String, key: String },
    #[error(transparent)]
    Kb(#[from] KbError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeStrategy {
    Knn,
    Random,
}

impl NegativeStrategy {
    /// Negatives per instance when the caller gives none.
    pub fn default_n(self) -> usize {
        match self {
            NegativeStrategy::Knn => 25,
            NegativeStrategy::Random => 50,
        }
    }
}

impl fmt::Display for NegativeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegativeStrategy::Knn => "knn",
            NegativeStrategy::Random => "random",
        })
    }
}

impl std::str::FromStr for NegativeStrategy {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, DatasetError> {
        match s {
            "knn" => Ok(Self::Knn),
            "random" => Ok(Self::Random),
            other => Err(DatasetError::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RetrievalInstance {
    pub question_id: String,
    pub question: String,
    pub table_id: String,
    pub positives: Vec<Triple>,
    pub negatives: Vec<Triple>,
}

/// One `retrieval_dataset.jsonl` line; triples are referenced by key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalInstanceRecord {
    pub question_id: String,
    pub question: String,
    pub table_id: String,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    pub strategy: NegativeStrategy,
    pub n: usize,
    pub seed: Option<u64>,
}

impl RetrievalInstance {
    pub fn to_record(&self, strategy: NegativeStrategy, n: usize, seed: Option<u64>) -> RetrievalInstanceRecord {
        RetrievalInstanceRecord {
            question_id: self.question_id.clone(),
            question: self.question.clone(),
            table_id: self.table_id.clone(),
            positives: self.positives.iter().map(Triple::key).collect(),
            negatives: self.negatives.iter().map(Triple::key).collect(),
            strategy,
            n,
            seed,
        }
    }

    /// Resolve the keys of `rec` against the table's sub-graph.
    pub fn from_record(rec: &RetrievalInstanceRecord, g: &SubGraph) -> Result<Self, DatasetError> {
        let by_key: HashMap<String, &Triple> = g.triples().map(|t| (t.key(), t)).collect();
        let resolve = |keys: &[String]| {
            keys.iter()
                .map(|k| {
                    by_key.get(k).map(|t| (*t).clone()).ok_or_else(|| DatasetError::UnknownTriple {
                        table: rec.table_id.clone(),
                        key: k.clone(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()
        };
        Ok(Self {
            question_id: rec.question_id.clone(),
            question: rec.question.clone(),
            table_id: rec.table_id.clone(),
            positives: resolve(&rec.positives)?,
            negatives: resolve(&rec.negatives)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationRule {
    InvalidAnswerSource,
    MissingGoldEvidence,
    InvalidEvidence,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub question_id: String,
    pub rule: ValidationRule,
    pub detail: String,
}

impl ValidationIssue {
    fn new(q: &Question, rule: ValidationRule, detail: impl Into<String>) -> Self {
        Self {
            question_id: q.id.clone(),
            rule,
            detail: detail.into(),
        }
    }
}

/// Context vector of every triple of `g`, keyed for ranking.
struct TripleVectors<S> {
    rows: Vec<(Triple, String, Vec<S>)>,
}

impl<S: Scalar> TripleVectors<S> {
    fn build<P: EmbeddingProvider<S> + ?Sized>(g: &SubGraph, provider: &P) -> Result<Self, DatasetError> {
        let mut rows = Vec::with_capacity(g.len());
        for tr in g.triples() {
            let key = tr.key();
            let text = serialize_triple(tr, g.labels())?.text;
            let v = provider
                .embed_context(&text)
                .map_err(|source| DatasetError::Provider { key: key.clone(), source })?;
            rows.push((tr.clone(), key, v));
        }
        Ok(Self { rows })
    }

    fn nearest(&self, qv: &[S], positives: &BTreeSet<&Triple>, n: usize) -> Vec<Triple> {
        let mut scored: Vec<(f64, &str, &Triple)> = self
            .rows
            .iter()
            .filter(|(t, _, _)| !positives.contains(t))
            .map(|(t, k, v)| (dot(qv, v).to_f64_lossy(), k.as_str(), t))
            .collect();
        scored.sort_by(|a, b| rank_order(a.0, a.1, b.0, b.1));
        scored.into_iter().take(n).map(|(_, _, t)| t.clone()).collect()
    }
}

/// The `n` non-positive triples whose serialized form lies closest to the
/// question by dot product. Ties break on triple key.
pub fn knn_negative_sample<S, P>(
    q: &str,
    g: &SubGraph,
    positives: &[Triple],
    n: usize,
    provider: &P,
) -> Result<Vec<Triple>, DatasetError>
where
    S: Scalar,
    P: EmbeddingProvider<S> + ?Sized,
{
    if g.is_empty() {
        return Err(DatasetError::EmptySubGraph);
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let vectors = TripleVectors::build(g, provider)?;
    let qv = provider.embed_query(q).map_err(|source| DatasetError::Provider {
        key: "<question>".into(),
        source,
    })?;
    Ok(vectors.nearest(&qv, &positives.iter().collect(), n))
}

/// `min(n, available)` non-positive triples drawn uniformly without
/// replacement, in draw order.
pub fn random_negative_sample(g: &SubGraph, positives: &[Triple], n: usize, seed: u64) -> Vec<Triple> {
    let pool: Vec<&Triple> = g.triples().filter(|t| !positives.contains(t)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, pool.len(), n.min(pool.len()))
        .iter()
        .map(|i| pool[i].clone())
        .collect()
}

/// Seed for one question's random draw.
fn question_seed(seed: u64, question_id: &str) -> u64 {
    seed ^ fnv1a64(question_id.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetConfig {
    pub strategy: NegativeStrategy,
    /// Negatives per instance; `None` takes the strategy default.
    pub n: Option<usize>,
    /// Base seed of the random strategy (per-question seeds are derived from it).
    pub seed: Option<u64>,
}

impl DatasetConfig {
    pub fn n(&self) -> usize {
        self.n.unwrap_or_else(|| self.strategy.default_n())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BuiltDataset {
    pub instances: Vec<RetrievalInstance>,
    pub issues: Vec<ValidationIssue>,
}

/// One instance per question with in-graph gold evidence. Questions that
/// fail that check become issues and are skipped. Output follows question id.
pub fn build_retrieval_dataset<S: Scalar>(
    questions: &[Question],
    tables: &BTreeMap<String, Table>,
    graphs: &BTreeMap<String, SubGraph>,
    cfg: &DatasetConfig,
    provider: Option<&dyn EmbeddingProvider<S>>,
) -> Result<BuiltDataset, DatasetError> {
    if cfg.strategy == NegativeStrategy::Knn && provider.is_none() {
        return Err(DatasetError::MissingProvider);
    }
    let n = cfg.n();
    let mut order: Vec<&Question> = questions.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut cache: HashMap<&str, TripleVectors<S>> = HashMap::new();
    let mut out = BuiltDataset::default();
    for q in order {
        let Some(g) = graphs.get(&q.table_id).filter(|_| tables.contains_key(&q.table_id)) else {
            out.issues.push(ValidationIssue::new(
                q,
                ValidationRule::InvalidEvidence,
                format!("unknown table {}", q.table_id),
            ));
            continue;
        };
        let positives = q.gold_triples();
        if positives.is_empty() {
            out.issues
                .push(ValidationIssue::new(q, ValidationRule::MissingGoldEvidence, "no gold evidence"));
            continue;
        }
        if let Some(missing) = positives.iter().find(|t| !g.contains(t)) {
            out.issues.push(ValidationIssue::new(
                q,
                ValidationRule::InvalidEvidence,
                format!("triple {} not in sub-graph", missing.key()),
            ));
            continue;
        }
        let negatives = match cfg.strategy {
            NegativeStrategy::Random => {
                random_negative_sample(g, &positives, n, question_seed(cfg.seed.unwrap_or(0), &q.id))
            }
            NegativeStrategy::Knn => {
                let p = provider.expect("checked above");
                if !cache.contains_key(q.table_id.as_str()) {
                    cache.insert(q.table_id.as_str(), TripleVectors::build(g, p)?);
                }
                let qv = p.embed_query(&q.question).map_err(|source| DatasetError::Provider {
                    key: format!("question {}", q.id),
                    source,
                })?;
                cache[q.table_id.as_str()].nearest(&qv, &positives.iter().collect(), n)
            }
        };
        out.instances.push(RetrievalInstance {
            question_id: q.id.clone(),
            question: q.question.clone(),
            table_id: q.table_id.clone(),
            positives,
            negatives,
        });
    }
    Ok(out)
}

/// Word-level longest common subsequence length over the question length.
/// A question without words scores 0.
pub fn lcs_similarity(question: &str, passage: &str) -> f64 {
    let q = word_tokens(question);
    let p = word_tokens(passage);
    if q.is_empty() {
        return 0.0;
    }
    let mut prev = vec![0usize; p.len() + 1];
    let mut cur = vec![0usize; p.len() + 1];
    for qw in &q {
        for (j, pw) in p.iter().enumerate() {
            cur[j + 1] = if qw == pw {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[p.len()] as f64 / q.len() as f64
}

/// Split on LCS similarity against each question's source passage
/// (`passages` maps question id to passage). Questions at or above the
/// threshold are dropped; questions without a passage are kept.
pub fn filter_questions(
    questions: &[Question],
    passages: &HashMap<String, String>,
    threshold: f64,
) -> Result<(Vec<Question>, Vec<Question>), DatasetError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(DatasetError::Config(format!("threshold {threshold} outside [0, 1]")));
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for q in questions {
        match passages.get(&q.id) {
            Some(p) if lcs_similarity(&q.question, p) >= threshold => dropped.push(q.clone()),
            Some(_) => kept.push(q.clone()),
            None => {
                log::warn!("question {}: no passage, kept", q.id);
                kept.push(q.clone());
            }
        }
    }
    Ok((kept, dropped))
}

/// How an answer is matched against KB surface forms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "threshold")]
pub enum FuzzyMatch {
    /// Normalized answer equals a normalized label or literal.
    Exact,
    /// At least this fraction of answer tokens occur in one label or literal.
    TokenContainment(f64),
}

impl Default for FuzzyMatch {
    fn default() -> Self {
        FuzzyMatch::Exact
    }
}

fn fuzzy_hit(answer: &str, form: &str, mode: FuzzyMatch) -> bool {
    match mode {
        FuzzyMatch::Exact => normalize_answer(answer) == normalize_answer(form),
        FuzzyMatch::TokenContainment(th) => {
            let a = word_set(&normalize_answer(answer));
            if a.is_empty() {
                return false;
            }
            let f = word_set(&normalize_answer(form));
            a.intersection(&f).count() as f64 / a.len() as f64 >= th
        }
    }
}

/// Keep questions whose answer has a match in the KB sub-graph but not in
/// the table. Returns `(kept, dropped)`.
pub fn fuzzy_kb_filter(
    questions: &[Question],
    tables: &BTreeMap<String, Table>,
    graphs: &BTreeMap<String, SubGraph>,
    mode: FuzzyMatch,
) -> (Vec<Question>, Vec<Question>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for q in questions {
        let (Some(t), Some(g)) = (tables.get(&q.table_id), graphs.get(&q.table_id)) else {
            dropped.push(q.clone());
            continue;
        };
        let a = normalize_answer(&q.answer);
        let in_table = t.cells().any(|c| normalize_answer(&c.text) == a);
        let in_kb = kb_surface_forms(g).any(|f| fuzzy_hit(&q.answer, f, mode));
        if in_kb && !in_table {
            kept.push(q.clone());
        } else {
            dropped.push(q.clone());
        }
    }
    (kept, dropped)
}

/// Check evidence coordinates and triples, and trace each declared answer
/// source back to the table or KB. A cell that does not link the evidence
/// triple's head is only logged.
pub fn validate_annotations(
    questions: &[Question],
    tables: &BTreeMap<String, Table>,
    graphs: &BTreeMap<String, SubGraph>,
) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    for q in questions {
        let (Some(t), Some(g)) = (tables.get(&q.table_id), graphs.get(&q.table_id)) else {
            issues.push(ValidationIssue::new(
                q,
                ValidationRule::InvalidEvidence,
                format!("unknown table {}", q.table_id),
            ));
            continue;
        };
        if q.gold_evidence.is_empty() {
            issues.push(ValidationIssue::new(q, ValidationRule::MissingGoldEvidence, "no gold evidence"));
        }
        for (i, e) in q.gold_evidence.iter().enumerate() {
            match t.cell(e.row, e.col) {
                None => issues.push(ValidationIssue::new(
                    q,
                    ValidationRule::InvalidEvidence,
                    format!(
                        "evidence {i}: cell ({}, {}) outside {}x{} table",
                        e.row,
                        e.col,
                        t.n_rows(),
                        t.n_cols()
                    ),
                )),
                Some(c) if !c.links_to(&e.triple.head) => log::warn!(
                    "question {}: evidence {i} cell ({}, {}) does not link {}",
                    q.id,
                    e.row,
                    e.col,
                    e.triple.head
                ),
                Some(_) => {}
            }
            if !g.contains(&e.triple) {
                issues.push(ValidationIssue::new(
                    q,
                    ValidationRule::InvalidEvidence,
                    format!("evidence {i}: triple {} not in sub-graph", e.triple.key()),
                ));
            }
        }
        let a = normalize_answer(&q.answer);
        let traced = match q.answer_source {
            AnswerSource::InTable => t.cells().any(|c| normalize_answer(&c.text) == a),
            AnswerSource::InKb => kb_surface_forms(g).any(|f| normalize_answer(f) == a),
            AnswerSource::Calculated => true,
        };
        if !traced {
            issues.push(ValidationIssue::new(
                q,
                ValidationRule::InvalidAnswerSource,
                format!("answer {:?} not found for source {}", q.answer, q.answer_source),
            ));
        }
    }
    issues
}

/// Seeded shuffle, then `floor(n * ratio)` items each to dev and test and
/// the remainder to train.
pub fn split_dataset<T: Clone>(
    items: &[T],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>), DatasetError> {
    let (tr, dv, te) = ratios;
    if [tr, dv, te].iter().any(|r| !(0.0..=1.0).contains(r)) || (tr + dv + te - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Config(format!("ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    let n = items.len();
    let n_dev = (n as f64 * dv + 1e-9).floor() as usize;
    let n_test = (n as f64 * te + 1e-9).floor() as usize;
    let n_train = n - n_dev - n_test;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    Ok((
        pick(&idx[..n_train]),
        pick(&idx[n_train..n_train + n_dev]),
        pick(&idx[n_train + n_dev..]),
    ))
}

/// Labels needed to serialize the triples of every instance.
pub fn instance_labels<'a>(graphs: impl IntoIterator<Item = &'a SubGraph>) -> LabelMap {
    let mut out = LabelMap::new();
    for g in graphs {
        for (id, label) in g.labels().iter() {
            let _ = out.insert(id, label);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;
    use crate::kb::{default_excluded_datatypes, EntityId, PropertyId};
    use crate::retrieve::HashingEmbedder;
    use proptest::prelude::*;
    use std::path::PathBuf;

    fn fixture() -> Corpus {
        let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/e2e");
        Corpus::load(
            &dir.join("kb.jsonl"),
            &dir.join("tables.jsonl"),
            Some(&dir.join("questions.jsonl")),
            &default_excluded_datatypes(),
        )
        .unwrap()
    }

    /// Exhaustive kNN: repeatedly take the closest remaining non-positive.
    fn brute_knn(q: &str, g: &SubGraph, pos: &[Triple], n: usize, h: &HashingEmbedder<f64>) -> Vec<Triple> {
        let qv = h.embed_query(q).unwrap();
        let mut pool: Vec<(f64, String, Triple)> = g
            .triples()
            .filter(|t| !pos.contains(t))
            .map(|t| {
                let v = h.embed_context(&serialize_triple(t, g.labels()).unwrap().text).unwrap();
                let s: f64 = qv.iter().zip(&v).map(|(a, b)| a * b).sum();
                (s, t.key(), t.clone())
            })
            .collect();
        let mut out = Vec::new();
        while out.len() < n && !pool.is_empty() {
            let mut best = 0;
            for i in 1..pool.len() {
                if pool[i].0 > pool[best].0 || (pool[i].0 == pool[best].0 && pool[i].1 < pool[best].1) {
                    best = i;
                }
            }
            out.push(pool.swap_remove(best).2);
        }
        out
    }

    #[test]
    fn knn_matches_brute_force() {
        let c = fixture();
        let h = HashingEmbedder::<f64>::new(256).unwrap();
        for q in &c.questions {
            let g = c.graph(&q.table_id).unwrap();
            let pos = q.gold_triples();
            for n in [0, 1, 3, 10, 1000] {
                let got = knn_negative_sample(&q.question, g, &pos, n, &h).unwrap();
                assert_eq!(got, brute_knn(&q.question, g, &pos, n, &h), "{} n={n}", q.id);
            }
        }
        let all = knn_negative_sample(&c.questions[0].question, c.graph("T_ALBUMS").unwrap(), &[], 1000, &h).unwrap();
        assert_eq!(all.len(), 37);
        assert!(knn_negative_sample("x", &SubGraph::default(), &[], 3, &h).is_err());
    }

    #[test]
    fn random_sampling() {
        let c = fixture();
        let g = c.graph("T_ALBUMS").unwrap();
        let pos = c.questions[0].gold_triples();
        let a = random_negative_sample(g, &pos, 5, 11);
        assert_eq!(a, random_negative_sample(g, &pos, 5, 11));
        assert!(a.iter().all(|t| !pos.contains(t)));
        let all: BTreeSet<Triple> = random_negative_sample(g, &pos, 35, 1).into_iter().collect();
        let expected: BTreeSet<Triple> = g.triples().filter(|t| !pos.contains(t)).cloned().collect();
        assert_eq!(all, expected);

        // inclusion frequency of each non-positive is n / available
        let runs = 8000u64;
        let n = 7;
        let mut counts: HashMap<Triple, usize> = HashMap::new();
        for s in 0..runs {
            for t in random_negative_sample(g, &pos, n, s) {
                *counts.entry(t).or_default() += 1;
            }
        }
        let p = n as f64 / expected.len() as f64;
        let mean = runs as f64 * p;
        let sd = (runs as f64 * p * (1.0 - p)).sqrt();
        assert_eq!(counts.len(), expected.len());
        assert!(counts.values().all(|&c| (c as f64 - mean).abs() < 3.5 * sd));
    }

    fn cfg(strategy: NegativeStrategy, n: Option<usize>, seed: Option<u64>) -> DatasetConfig {
        DatasetConfig { strategy, n, seed }
    }

    #[test]
    fn dataset_instances_are_disjoint() {
        let c = fixture();
        let h = HashingEmbedder::<f64>::new(256).unwrap();
        let p: &dyn EmbeddingProvider<f64> = &h;
        let three = &c.questions[..3];
        let built = build_retrieval_dataset(three, &c.tables, &c.graphs, &cfg(NegativeStrategy::Knn, None, None), Some(p))
            .unwrap();
        assert!(built.issues.is_empty());
        assert_eq!(built.instances.len(), 3);
        for inst in &built.instances {
            let g = c.graph(&inst.table_id).unwrap();
            let pos: BTreeSet<&Triple> = inst.positives.iter().collect();
            let neg: BTreeSet<&Triple> = inst.negatives.iter().collect();
            assert!(pos.is_disjoint(&neg));
            assert_eq!(neg.len(), 25);
            assert!(inst.positives.iter().chain(&inst.negatives).all(|t| g.contains(t)));
        }
    }

    #[test]
    fn dataset_exhausts_small_graphs() {
        let c = fixture();
        let h = HashingEmbedder::<f64>::new(256).unwrap();
        let q = c.questions.iter().find(|q| q.table_id == "T_CITIES").unwrap();
        let g = c.graph("T_CITIES").unwrap();
        let available = g.len() - q.gold_triples().len();
        assert!(available < 25);
        let built = build_retrieval_dataset(
            std::slice::from_ref(q),
            &c.tables,
            &c.graphs,
            &cfg(NegativeStrategy::Knn, Some(25), None),
            Some(&h as &dyn EmbeddingProvider<f64>),
        )
        .unwrap();
        assert_eq!(built.instances[0].negatives.len(), available);
    }

    #[test]
    fn random_dataset_is_stable() {
        let c = fixture();
        let run = || {
            let b = build_retrieval_dataset::<f64>(
                &c.questions,
                &c.tables,
                &c.graphs,
                &cfg(NegativeStrategy::Random, None, Some(5)),
                None,
            )
            .unwrap();
            let lines: Vec<String> = b
                .instances
                .iter()
                .map(|i| serde_json::to_string(&i.to_record(NegativeStrategy::Random, 50, Some(5))).unwrap())
                .collect();
            lines.join("\n")
        };
        assert_eq!(run(), run());
        assert!(build_retrieval_dataset::<f64>(
            &c.questions,
            &c.tables,
            &c.graphs,
            &cfg(NegativeStrategy::Knn, None, None),
            None
        )
        .is_err());
    }

    #[test]
    fn record_round_trip() {
        let c = fixture();
        let b = build_retrieval_dataset::<f64>(
            &c.questions[..2],
            &c.tables,
            &c.graphs,
            &cfg(NegativeStrategy::Random, Some(4), Some(1)),
            None,
        )
        .unwrap();
        let rec = b.instances[0].to_record(NegativeStrategy::Random, 4, Some(1));
        let json = serde_json::to_value(&rec).unwrap();
        assert_eq!(json["strategy"], "random");
        let back: RetrievalInstanceRecord = serde_json::from_value(json).unwrap();
        let g = c.graph(&rec.table_id).unwrap();
        assert_eq!(RetrievalInstance::from_record(&back, g).unwrap(), b.instances[0]);
    }

    #[test]
    fn bad_questions_become_issues() {
        let c = fixture();
        let mut qs = c.questions[..2].to_vec();
        qs[0].gold_evidence.clear();
        qs[1].gold_evidence[0].triple = Triple::attribute(
            EntityId::new("Q_NOPE").unwrap(),
            PropertyId::new("P").unwrap(),
            "string",
            "x",
        );
        let b = build_retrieval_dataset::<f64>(&qs, &c.tables, &c.graphs, &cfg(NegativeStrategy::Random, None, Some(0)), None)
            .unwrap();
        assert!(b.instances.is_empty());
        let rules: Vec<ValidationRule> = b.issues.iter().map(|i| i.rule).collect();
        assert_eq!(rules, vec![ValidationRule::MissingGoldEvidence, ValidationRule::InvalidEvidence]);
    }

    /// Textbook O(nm) LCS table over words.
    fn lcs_oracle(a: &[&str], b: &[&str]) -> usize {
        let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                t[i][j] = if a[i - 1] == b[j - 1] {
                    t[i - 1][j - 1] + 1
                } else {
                    t[i - 1][j].max(t[i][j - 1])
                };
            }
        }
        t[a.len()][b.len()]
    }

    #[test]
    fn lcs_examples() {
        assert_eq!(lcs_similarity("who signed kanye", "who signed kanye"), 1.0);
        assert_eq!(lcs_similarity("alpha beta", "gamma delta"), 0.0);
        let q = "w1 w2 w3 w4 w5 w6 w7 w8 w9 w10";
        let p = "w1 x w2 w3 y w4 w5 w6 z w7";
        assert_eq!(lcs_oracle(&q.split(' ').collect::<Vec<_>>(), &p.split(' ').collect::<Vec<_>>()), 7);
        assert!((lcs_similarity(q, p) - 0.7).abs() < 1e-15);
        assert_eq!(lcs_similarity("", "x"), 0.0);
    }

    fn question(id: &str, text: &str) -> Question {
        Question {
            id: id.into(),
            table_id: "T".into(),
            question: text.into(),
            answer: "x".into(),
            answer_source: AnswerSource::Calculated,
            gold_evidence: vec![],
        }
    }

    #[test]
    fn filter_examples() {
        let qs = vec![
            question("a", "one two three four"),         // 3/4 = 0.75
            question("b", "one two three four five"),    // 2/5
            question("c", "alpha beta"),                 // contained: 1.0
            question("d", "no passage here"),
        ];
        let passages: HashMap<String, String> = [
            ("a", "one two three"),
            ("b", "two five"),
            ("c", "so alpha and beta"),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        let ids = |v: &[Question]| v.iter().map(|q| q.id.clone()).collect::<Vec<_>>();
        let (kept, dropped) = filter_questions(&qs, &passages, 0.7).unwrap();
        assert_eq!(ids(&dropped), ["a", "c"]);
        assert_eq!(ids(&kept), ["b", "d"]);
        let (_, dropped) = filter_questions(&qs, &passages, 1.0).unwrap();
        assert_eq!(ids(&dropped), ["c"]);
        let (kept, _) = filter_questions(&qs, &passages, 0.0).unwrap();
        assert_eq!(ids(&kept), ["d"]);
        assert!(filter_questions(&qs, &passages, 1.5).is_err());
    }

    #[test]
    fn fuzzy_filter() {
        let c = fixture();
        let (kept, dropped) = fuzzy_kb_filter(&c.questions, &c.tables, &c.graphs, FuzzyMatch::Exact);
        assert!(kept.iter().all(|q| q.answer_source == AnswerSource::InKb));
        assert!(dropped.iter().any(|q| q.answer_source == AnswerSource::InTable));
        let mut q = c.questions[1].clone();
        q.answer = "Joseph".into();
        assert_eq!(fuzzy_kb_filter(&[q.clone()], &c.tables, &c.graphs, FuzzyMatch::Exact).0.len(), 0);
        assert_eq!(
            fuzzy_kb_filter(&[q], &c.tables, &c.graphs, FuzzyMatch::TokenContainment(1.0)).0.len(),
            1
        );
    }

    #[test]
    fn validation_clean_and_corrupted() {
        let c = fixture();
        assert!(validate_annotations(&c.questions, &c.tables, &c.graphs).is_empty());

        let mut qs = c.questions.clone();
        qs[0].gold_evidence[0].row = 99;
        qs[1].gold_evidence.clear();
        qs[2].answer = "Nowhere".into();
        qs[5].answer = "Nobody".into(); // in_table
        let issues = validate_annotations(&qs, &c.tables, &c.graphs);
        let got: Vec<(String, ValidationRule)> = issues.iter().map(|i| (i.question_id.clone(), i.rule)).collect();
        assert_eq!(
            got,
            vec![
                (qs[0].id.clone(), ValidationRule::InvalidEvidence),
                (qs[1].id.clone(), ValidationRule::MissingGoldEvidence),
                (qs[2].id.clone(), ValidationRule::InvalidAnswerSource),
                (qs[5].id.clone(), ValidationRule::InvalidAnswerSource),
            ]
        );
    }

    #[test]
    fn cell_link_mismatch_is_not_an_issue() {
        let c = fixture();
        let mut qs = c.questions[..1].to_vec();
        // (0, 2) is the year cell of the row, which links nothing
        qs[0].gold_evidence[0].col = 2;
        assert!(validate_annotations(&qs, &c.tables, &c.graphs).is_empty());
    }

    #[test]
    fn split_examples() {
        let ten: Vec<u32> = (0..10).collect();
        let (a, b, c) = split_dataset(&ten, (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        assert_eq!(split_dataset(&ten, (0.8, 0.1, 0.1), 3).unwrap(), (a, b, c));
        let big: Vec<u32> = (0..9421).collect();
        let (a, b, c) = split_dataset(&big, (0.8, 0.1, 0.1), 0).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (7537, 942, 942));
        assert!(split_dataset(&ten, (0.5, 0.1, 0.1), 0).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 0usize..200, seed: u64, dev in 0.0f64..0.5) {
            let items: Vec<usize> = (0..n).collect();
            let (a, b, c) = split_dataset(&items, (1.0 - dev, dev / 2.0, dev / 2.0), seed).unwrap();
            let mut all: Vec<usize> = a.into_iter().chain(b).chain(c).collect();
            all.sort();
            prop_assert_eq!(all, items);
        }

        #[test]
        fn lcs_properties(q in proptest::collection::vec("[a-e]", 1..8), p in proptest::collection::vec("[a-e]", 0..8), extra in "[a-e]") {
            let qs = q.join(" ");
            let ps = p.join(" ");
            let s = lcs_similarity(&qs, &ps);
            prop_assert!((0.0..=1.0).contains(&s));
            let qr: Vec<&str> = q.iter().map(String::as_str).collect();
            let pr: Vec<&str> = p.iter().map(String::as_str).collect();
            prop_assert!((s - lcs_oracle(&qr, &pr) as f64 / q.len() as f64).abs() < 1e-15);
            prop_assert_eq!(lcs_similarity(&qs, &qs), 1.0);
            // appending a word never lowers the score
            let longer = format!("{} {}", ps, extra);
            prop_assert!(lcs_similarity(&qs, &longer) >= s);
            prop_assert_eq!(lcs_similarity(&qs, &q.iter().map(|w| format!("{w}z")).collect::<Vec<_>>().join(" ")), 0.0);
        }

        #[test]
        fn knn_negatives_exclude_positives(seed: u64, n in 0usize..40) {
            let c = fixture();
            let g = c.graph("T_ALBUMS").unwrap();
            let all: Vec<Triple> = g.triples().cloned().collect();
            let pos = vec![all[(seed % all.len() as u64) as usize].clone()];
            let h = HashingEmbedder::<f64>::new(64).unwrap();
            let neg = knn_negative_sample("who is the artist", g, &pos, n, &h).unwrap();
            prop_assert_eq!(neg.len(), n.min(all.len() - 1));
            prop_assert!(neg.iter().all(|t| !pos.contains(t) && g.contains(t)));
        }
    }
}
