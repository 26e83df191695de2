//! Retrieval Recall@k, answer EM/F1 and answer-source classification.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::kb::{SubGraph, Triple, TripleTail};
use crate::retrieve::{
    bi_encoder_retrieve, build_index, EmbeddingProvider, RetrieveError, TripleIndex, TripleRetriever,
};
use crate::scalar::Scalar;
use crate::table::{AnswerSource, Question, Table};

/// Default cut-offs of retrieval reports.
pub const DEFAULT_KS: [usize; 4] = [1, 5, 20, 100];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("instance {0} has no gold items")]
    EmptyGold(usize),
    #[error("{retrieved} retrieved lists for {gold} gold sets")]
    Misaligned { retrieved: usize, gold: usize },
    #[error("k must be >= 1")]
    ZeroK,
    #[error("no instances to evaluate")]
    Empty,
    #[error("question {id}: {source}")]
    Retrieve {
        id: String,
        #[source]
        source: RetrieveError,
    },
    #[error("question {id}: unknown table {table}")]
    UnknownTable { id: String, table: String },
}

/// Fraction of `gold` found among the first `k` of `retrieved`.
fn instance_recall<T: Ord>(retrieved: &[T], gold: &BTreeSet<T>, k: usize) -> f64 {
    let hits: BTreeSet<&T> = retrieved.iter().take(k).filter(|t| gold.contains(*t)).collect();
    hits.len() as f64 / gold.len() as f64
}

/// Mean over instances of `|gold ∩ top-k| / |gold|`. Gold is a set, so
/// duplicate annotations and duplicate retrievals count once.
pub fn recall_at_k<T: Ord>(retrieved: &[Vec<T>], gold: &[BTreeSet<T>], k: usize) -> Result<f64, EvalError> {
    if retrieved.len() != gold.len() {
        return Err(EvalError::Misaligned {
            retrieved: retrieved.len(),
            gold: gold.len(),
        });
    }
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if gold.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sum = 0.0;
    for (i, (r, g)) in retrieved.iter().zip(gold).enumerate() {
        if g.is_empty() {
            return Err(EvalError::EmptyGold(i));
        }
        sum += instance_recall(r, g, k);
    }
    Ok(sum / gold.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEvalResult {
    pub per_k: BTreeMap<usize, f64>,
    pub instance_count: usize,
}

/// Run `retriever` over every question with gold evidence and report R@k.
///
/// Questions without gold evidence are skipped with a warning.
pub fn evaluate_retrieval<R: TripleRetriever + ?Sized>(
    retriever: &R,
    corpus: &Corpus,
    questions: &[Question],
    ks: &[usize],
) -> Result<RetrievalEvalResult, EvalError> {
    let kmax = ks.iter().copied().max().ok_or(EvalError::ZeroK)?;
    let mut retrieved = Vec::new();
    let mut gold = Vec::new();
    for q in questions {
        let g: BTreeSet<Triple> = q.gold_triples().into_iter().collect();
        if g.is_empty() {
            log::warn!("question {}: no gold evidence, skipped", q.id);
            continue;
        }
        let (t, sg) = match (corpus.table(&q.table_id), corpus.graph(&q.table_id)) {
            (Some(t), Some(sg)) => (t, sg),
            _ => {
                return Err(EvalError::UnknownTable {
                    id: q.id.clone(),
                    table: q.table_id.clone(),
                })
            }
        };
        let r = if sg.is_empty() {
            Vec::new()
        } else {
            retriever
                .retrieve(&q.question, t, sg, kmax)
                .map_err(|source| EvalError::Retrieve {
                    id: q.id.clone(),
                    source,
                })?
                .triples
                .into_iter()
                .map(|s| s.triple)
                .collect()
        };
        retrieved.push(r);
        gold.push(g);
    }
    let mut per_k = BTreeMap::new();
    for &k in ks {
        per_k.insert(k, recall_at_k(&retrieved, &gold, k)?);
    }
    Ok(RetrievalEvalResult {
        per_k,
        instance_count: gold.len(),
    })
}

/// R@k of the bare bi-encoder under `provider`, indexing only the tables
/// the questions refer to.
pub fn bi_encoder_recall<S, P>(
    provider: &P,
    corpus: &Corpus,
    questions: &[Question],
    ks: &[usize],
) -> Result<RetrievalEvalResult, EvalError>
where
    S: Scalar,
    P: EmbeddingProvider<S> + ?Sized,
{
    let kmax = ks.iter().copied().max().ok_or(EvalError::ZeroK)?;
    let mut indexes: HashMap<&str, TripleIndex<S>> = HashMap::new();
    let mut retrieved = Vec::new();
    let mut gold = Vec::new();
    for q in questions {
        let g: BTreeSet<Triple> = q.gold_triples().into_iter().collect();
        if g.is_empty() {
            continue;
        }
        let (t, sg) = match (corpus.table(&q.table_id), corpus.graph(&q.table_id)) {
            (Some(t), Some(sg)) if !sg.is_empty() => (t, sg),
            _ => {
                return Err(EvalError::UnknownTable {
                    id: q.id.clone(),
                    table: q.table_id.clone(),
                })
            }
        };
        let wrap = |source| EvalError::Retrieve {
            id: q.id.clone(),
            source,
        };
        if !indexes.contains_key(q.table_id.as_str()) {
            indexes.insert(&q.table_id, build_index(sg, t, provider).map_err(wrap)?);
        }
        let r = bi_encoder_retrieve(&q.question, &indexes[q.table_id.as_str()], provider, kmax).map_err(wrap)?;
        retrieved.push(r.into_iter().map(|s| s.triple).collect::<Vec<_>>());
        gold.push(g);
    }
    let mut per_k = BTreeMap::new();
    for &k in ks {
        per_k.insert(k, recall_at_k(&retrieved, &gold, k)?);
    }
    Ok(RetrievalEvalResult {
        per_k,
        instance_count: gold.len(),
    })
}

/// Reading-comprehension normalization: lowercase, drop ASCII punctuation,
/// drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(pred: &str, gold: &str) -> u8 {
    u8::from(normalize_answer(pred) == normalize_answer(gold))
}

/// Token F1 over normalized tokens with multiset overlap.
pub fn f1(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt.is_empty() && gt.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Trace an answer back to the table first, then the KB; anything else
/// is taken to be computed.
pub fn classify_answer_source(answer: &str, t: &Table, g: &SubGraph) -> AnswerSource {
    let a = normalize_answer(answer);
    if t.cells().any(|c| normalize_answer(&c.text) == a) {
        return AnswerSource::InTable;
    }
    if kb_surface_forms(g).any(|s| normalize_answer(s) == a) {
        return AnswerSource::InKb;
    }
    AnswerSource::Calculated
}

/// Entity labels and attribute literals reachable in `g`.
pub(crate) fn kb_surface_forms(g: &SubGraph) -> impl Iterator<Item = &str> {
    let labels = g.labels();
    g.triples().flat_map(move |tr| {
        let head = labels.get(tr.head.as_str());
        let tail = match &tr.tail {
            TripleTail::Entity(e) => labels.get(e.as_str()),
            TripleTail::Literal { text, .. } => Some(text.as_str()),
        };
        head.into_iter().chain(tail)
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaReference {
    pub id: String,
    pub answer: String,
    pub source: AnswerSource,
}

impl From<&Question> for QaReference {
    fn from(q: &Question) -> Self {
        Self {
            id: q.id.clone(),
            answer: q.answer.clone(),
            source: q.answer_source,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceScores {
    pub em: f64,
    pub f1: f64,
    pub n: usize,
}

/// EM and F1 in percent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QaEvalResult {
    pub em: f64,
    pub f1: f64,
    pub per_source: BTreeMap<AnswerSource, SourceScores>,
    pub n: usize,
}

/// Mean EM/F1 over `references`; a missing prediction scores as "".
pub fn evaluate_qa(predictions: &HashMap<String, String>, references: &[QaReference]) -> QaEvalResult {
    let mut out = QaEvalResult {
        n: references.len(),
        ..Default::default()
    };
    if references.is_empty() {
        return out;
    }
    let mut sums: BTreeMap<AnswerSource, (f64, f64, usize)> = BTreeMap::new();
    for r in references {
        let pred = predictions.get(&r.id).map(String::as_str).unwrap_or("");
        if !predictions.contains_key(&r.id) {
            log::warn!("no prediction for {}", r.id);
        }
        let em = f64::from(exact_match(pred, &r.answer));
        let f = f1(pred, &r.answer);
        out.em += em;
        out.f1 += f;
        let s = sums.entry(r.source).or_default();
        s.0 += em;
        s.1 += f;
        s.2 += 1;
    }
    let n = references.len() as f64;
    out.em *= 100.0 / n;
    out.f1 *= 100.0 / n;
    out.per_source = sums
        .into_iter()
        .map(|(src, (em, f, c))| {
            let scale = 100.0 / c as f64;
            (src, SourceScores { em: em * scale, f1: f * scale, n: c })
        })
        .collect();
    out
}

/// JSON report written by the evaluation commands.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub recall: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_source: BTreeMap<AnswerSource, SourceScores>,
    pub n: usize,
}

impl EvalReport {
    pub fn from_retrieval(r: &RetrievalEvalResult) -> Self {
        Self {
            recall: r.per_k.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            n: r.instance_count,
            ..Default::default()
        }
    }

    pub fn from_qa(r: &QaEvalResult) -> Self {
        Self {
            em: Some(r.em),
            f1: Some(r.f1),
            per_source: r.per_source.clone(),
            n: r.n,
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{EntityId, LabelMap, PropertyId};
    use crate::table::Cell;
    use proptest::prelude::*;

    fn set(xs: &[u32]) -> BTreeSet<u32> {
        xs.iter().copied().collect()
    }

    #[test]
    fn recall_examples() {
        let r = vec![vec![1, 2, 3], vec![4, 5]];
        let g = vec![set(&[1, 2]), set(&[5])];
        assert_eq!(recall_at_k(&r, &g, 3).unwrap(), 1.0);
        let r = vec![vec![1, 2, 3, 9], vec![7, 8]];
        let g = vec![set(&[1, 2, 3, 4]), set(&[7, 6])];
        assert_eq!(recall_at_k(&r, &g, 4).unwrap(), 0.625);
        assert!(matches!(recall_at_k(&r, &[set(&[1]), set(&[])], 1), Err(EvalError::EmptyGold(1))));
        assert!(recall_at_k(&r, &g[..1], 1).is_err());
        assert!(recall_at_k(&r, &g, 0).is_err());
    }

    #[test]
    fn recall_counts_duplicates_once() {
        let r = vec![vec![1, 1, 1]];
        assert_eq!(recall_at_k(&r, &[set(&[1, 2])], 3).unwrap(), 0.5);
    }

    #[test]
    fn recall_hand_counted_fixture() {
        // five instances, k = 2
        let r = vec![vec![1, 2, 3], vec![5, 4], vec![6], vec![], vec![9, 8, 7]];
        let g = vec![set(&[1, 3]), set(&[4, 5]), set(&[6, 0, 11]), set(&[1]), set(&[7])];
        // 1/2, 2/2, 1/3, 0, 0
        let expected = (0.5 + 1.0 + 1.0 / 3.0) / 5.0;
        assert!((recall_at_k(&r, &g, 2).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("The College Dropout"), "college dropout");
        assert_eq!(normalize_answer("February 10, 2004"), "february 10 2004");
        assert_eq!(normalize_answer("  GOOD   Music "), "good music");
        assert_eq!(normalize_answer("an apple a day"), "apple day");
        assert_eq!(normalize_answer("Theatre"), "theatre");
    }

    #[test]
    fn em_f1_examples() {
        assert_eq!(exact_match("Kanye West", "Kanye West"), 1);
        assert_eq!(exact_match("the College Dropout", "College Dropout"), 1);
        assert_eq!(exact_match("Kanye West", "West"), 0);
        assert_eq!(f1("x y", "x y"), 1.0);
        assert!((f1("Kanye West", "West") - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1("a b c", "d e"), 0.0);
        assert_eq!(f1("", ""), 1.0);
        assert_eq!(f1("the", "x"), 0.0);
        // multiset: repeated pred token matches once
        assert!((f1("west west", "west") - 2.0 * 0.5 / 1.5).abs() < 1e-15);
    }

    fn fixture() -> (Table, SubGraph) {
        let t = Table::new(
            "T",
            vec!["Album".into(), "Artist".into()],
            vec![vec![
                Cell::linked("The College Dropout", [EntityId::new("Q_TCD").unwrap()]),
                Cell::plain("Kanye West"),
            ]],
        )
        .unwrap();
        let mut labels = LabelMap::new();
        labels.insert("Q_TCD", "The College Dropout").unwrap();
        labels.insert("P_pubdate", "publication date").unwrap();
        let tr = Triple::attribute(
            EntityId::new("Q_TCD").unwrap(),
            PropertyId::new("P_pubdate").unwrap(),
            "time",
            "February 10, 2004",
        );
        (t, SubGraph::new([tr], &labels).unwrap())
    }

    #[test]
    fn answer_source_examples() {
        let (t, g) = fixture();
        assert_eq!(classify_answer_source("Kanye West", &t, &g), AnswerSource::InTable);
        assert_eq!(classify_answer_source("february 10 2004", &t, &g), AnswerSource::InKb);
        assert_eq!(classify_answer_source("3", &t, &g), AnswerSource::Calculated);
        // in both: table wins
        assert_eq!(classify_answer_source("the college dropout", &t, &g), AnswerSource::InTable);
    }

    fn refs(items: &[(&str, &str, AnswerSource)]) -> Vec<QaReference> {
        items
            .iter()
            .map(|(id, a, s)| QaReference {
                id: id.to_string(),
                answer: a.to_string(),
                source: *s,
            })
            .collect()
    }

    #[test]
    fn qa_examples() {
        use AnswerSource::*;
        let r = refs(&[("1", "x", InKb), ("2", "y z", InTable)]);
        let all: HashMap<String, String> = [("1".into(), "x".into()), ("2".into(), "Y Z".into())].into();
        let res = evaluate_qa(&all, &r);
        assert_eq!((res.em, res.f1), (100.0, 100.0));
        let half: HashMap<String, String> = [("1".into(), "x".into())].into();
        assert_eq!(evaluate_qa(&half, &r).em, 50.0);

        // six mixed items scored by hand
        let r = refs(&[
            ("a", "Kanye West", InTable),
            ("b", "West", InKb),
            ("c", "February 10, 2004", InKb),
            ("d", "3", Calculated),
            ("e", "Jay-Z", InTable),
            ("f", "GOOD Music", InKb),
        ]);
        let p: HashMap<String, String> = [
            ("a", "kanye west"),      // em 1 f1 1
            ("b", "Kanye West"),      // em 0 f1 2/3
            ("c", "February 2004"),   // em 0 f1 p=1 r=2/3 -> 0.8
            ("d", "4"),               // 0 0
            ("e", "jay z"),           // "jayz" vs "jay z": 0 0
            ("f", "the GOOD Music."), // 1 1
        ]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        let res = evaluate_qa(&p, &r);
        assert!((res.em - 200.0 / 6.0).abs() < 1e-12);
        let f = (1.0 + 2.0 / 3.0 + 0.8 + 1.0) / 6.0 * 100.0;
        assert!((res.f1 - f).abs() < 1e-12);
        let kb = res.per_source[&InKb];
        assert_eq!(kb.n, 3);
        assert!((kb.em - 100.0 / 3.0).abs() < 1e-12);
        assert!((kb.f1 - (2.0 / 3.0 + 0.8 + 1.0) / 3.0 * 100.0).abs() < 1e-12);
        assert_eq!(res.per_source[&Calculated].em, 0.0);
    }

    #[test]
    fn report_json_shape() {
        let r = RetrievalEvalResult {
            per_k: [(1, 0.5), (5, 1.0)].into(),
            instance_count: 2,
        };
        let v = serde_json::to_value(EvalReport::from_retrieval(&r)).unwrap();
        assert_eq!(v, serde_json::json!({"recall": {"1": 0.5, "5": 1.0}, "n": 2}));
    }

    proptest! {
        #[test]
        fn em_implies_f1_and_symmetry(a in "[a-c ,.]{0,12}", b in "[a-c ,.]{0,12}") {
            if exact_match(&a, &b) == 1 {
                prop_assert_eq!(f1(&a, &b), 1.0);
            }
            prop_assert!((f1(&a, &b) - f1(&b, &a)).abs() < 1e-15);
            let f = f1(&a, &b);
            prop_assert!((0.0..=1.0).contains(&f));
        }

        #[test]
        fn f1_ignores_token_order(words in proptest::collection::vec("[a-d]{1,3}", 1..6), gold in "[a-d ]{1,10}") {
            let mut rev = words.clone();
            rev.reverse();
            prop_assert!((f1(&words.join(" "), &gold) - f1(&rev.join(" "), &gold)).abs() < 1e-15);
        }

        #[test]
        fn recall_monotone_in_k(
            r in proptest::collection::vec(proptest::collection::vec(0u32..20, 0..15), 1..6),
            g in proptest::collection::vec(proptest::collection::btree_set(0u32..20, 1..5), 1..6),
        ) {
            let n = r.len().min(g.len());
            let (r, g) = (&r[..n], &g[..n]);
            let mut prev = 0.0;
            for k in 1..20 {
                let v = recall_at_k(r, g, k).unwrap();
                prop_assert!(v >= prev && v <= 1.0);
                prev = v;
            }
        }
    }
}
