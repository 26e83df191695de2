//! Generated corpora with known answers, used by tests and the acceptance
//! suite to exercise retrieval and training beyond the small fixtures.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::dataset::{build_retrieval_dataset, DatasetConfig, NegativeStrategy, RetrievalInstance};
use crate::kb::{default_excluded_datatypes, EntityId, KbRecord, SubGraphStore, TailRecord, Triple};
use crate::retrieve::{EmbeddingProvider, FnScorer, HashingEmbedder, ScorePair};
use crate::table::{AnswerSource, Cell, GoldEvidence, Question, Table};
use crate::text::fnv1a64;

fn attr(head: &str, head_label: &str, prop: &str, prop_label: &str, value: &str) -> KbRecord {
    KbRecord {
        head: head.to_string(),
        head_label: head_label.to_string(),
        property: prop.to_string(),
        property_label: prop_label.to_string(),
        tail: TailRecord::Value {
            datatype: "string".into(),
            text: value.to_string(),
        },
    }
}

/// A generated benchmark plus its train/dev question split (empty when unused).
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub train: Vec<Question>,
    pub dev: Vec<Question>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeparableSpec {
    pub tables: usize,
    pub entities_per_table: usize,
    pub relations: usize,
    pub triples_per_entity: usize,
    /// Size of the shared pool of tail entities.
    pub objects: usize,
    pub train_questions: usize,
    pub dev_questions: usize,
}

impl Default for SeparableSpec {
    fn default() -> Self {
        Self {
            tables: 20,
            entities_per_table: 10,
            relations: 48,
            triples_per_entity: 32,
            objects: 40,
            train_questions: 300,
            dev_questions: 100,
        }
    }
}

/// Corpus where relation `r` is asked about with the cue word `askRR` but
/// labelled `propRR` in the KB. A question names the entity and the cue, so
/// the untrained hasher sees every triple of that entity as equally good and
/// a model must learn the cue/label pairing to rank the right one first.
pub fn separable_corpus(spec: &SeparableSpec, seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut tables = Vec::new();
    let mut pool = Vec::new();
    for t in 0..spec.tables {
        let mut rows = Vec::new();
        for i in 0..spec.entities_per_table {
            let id = format!("E{t}_{i}");
            let label = format!("ent{t}x{i}");
            rows.push(vec![
                Cell::linked(label.clone(), [EntityId::new(&id).expect("non-empty")]),
                Cell::plain(format!("grp{}", t % 5)),
            ]);
            let mut rels: Vec<usize> = (0..spec.relations).collect();
            rels.shuffle(&mut rng);
            for &r in &rels[..spec.triples_per_entity.min(spec.relations)] {
                let o = rng.random_range(0..spec.objects);
                let rec = KbRecord {
                    head: id.clone(),
                    head_label: label.clone(),
                    property: format!("P{r:02}"),
                    property_label: format!("prop{r:02}"),
                    tail: TailRecord::Entity {
                        id: format!("O{o}"),
                        label: format!("obj{o}"),
                    },
                };
                pool.push((t, i, r, rec.clone()));
                records.push(rec);
            }
        }
        tables.push(Table::new(format!("S{t:03}"), vec!["Name".into(), "Group".into()], rows).expect("rectangular"));
    }
    pool.shuffle(&mut rng);
    let n_q = (spec.train_questions + spec.dev_questions).min(pool.len());
    let questions: Vec<Question> = pool[..n_q]
        .iter()
        .enumerate()
        .map(|(k, (t, i, r, rec))| Question {
            id: format!("s{k:05}"),
            table_id: format!("S{t:03}"),
            question: format!("ask{r:02} ent{t}x{i}"),
            answer: match &rec.tail {
                TailRecord::Entity { label, .. } => label.clone(),
                TailRecord::Value { text, .. } => text.clone(),
            },
            answer_source: AnswerSource::InKb,
            gold_evidence: vec![GoldEvidence {
                row: *i,
                col: 0,
                triple: rec.to_triple().expect("valid record"),
            }],
        })
        .collect();
    let store = SubGraphStore::from_records(records).expect("consistent labels");
    let corpus = Corpus::from_parts(&store, tables, questions.clone(), &default_excluded_datatypes())
        .expect("unique table ids");
    let split = spec.train_questions.min(questions.len());
    SyntheticCorpus {
        corpus,
        train: questions[..split].to_vec(),
        dev: questions[split..].to_vec(),
    }
}

/// SGD step size that fits [`separable_corpus`] within the default epochs.
pub const SEPARABLE_LEARNING_RATE: f64 = 0.3;

/// Train and dev retrieval instances for a separable corpus, negatives drawn
/// with `strategy` (kNN uses the untrained hasher of width `dim`).
pub fn separable_instances(
    s: &SyntheticCorpus,
    strategy: NegativeStrategy,
    n: usize,
    seed: u64,
    dim: usize,
) -> (Vec<RetrievalInstance>, Vec<RetrievalInstance>) {
    let h = HashingEmbedder::<f64>::new(dim).expect("valid width");
    let cfg = DatasetConfig {
        strategy,
        n: Some(n),
        seed: Some(seed),
    };
    let c = &s.corpus;
    let build = |qs: &[Question]| {
        build_retrieval_dataset(qs, &c.tables, &c.graphs, &cfg, Some(&h as &dyn EmbeddingProvider<f64>))
            .expect("generated data is consistent")
            .instances
    };
    (build(&s.train), build(&s.dev))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultistageSpec {
    pub tables: usize,
    pub questions_per_table: usize,
    pub entities_per_table: usize,
    pub relations: usize,
}

impl Default for MultistageSpec {
    fn default() -> Self {
        // 50 × 4 = 200 questions over 25 × 20 = 500 triples per table
        Self {
            tables: 50,
            questions_per_table: 4,
            entities_per_table: 25,
            relations: 20,
        }
    }
}

const WORDS: [&str; 20] = [
    "birth", "death", "spouse", "genre", "label", "award", "country", "city", "language", "employer", "school",
    "height", "member", "sibling", "parent", "owner", "founder", "release", "producer", "religion",
];

/// Corpus for comparing the bi-encoder alone against the two-stage pipeline.
/// Every table holds every (entity, relation) attribute; questions ask for
/// one or two of them. Relation labels share words, so a low-dimensional
/// hasher confuses them.
pub fn multistage_corpus(spec: &MultistageSpec, seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut tables = Vec::new();
    let mut questions = Vec::new();
    let rel_label = |r: usize| format!("{} {}", WORDS[r % WORDS.len()], WORDS[(r * 7 + 3) % WORDS.len()]);
    for t in 0..spec.tables {
        let mut rows = Vec::new();
        let mut by_entity: Vec<Vec<KbRecord>> = Vec::new();
        for i in 0..spec.entities_per_table {
            let id = format!("M{t}_{i}");
            let label = format!("person{t}x{i}");
            rows.push(vec![Cell::linked(label.clone(), [EntityId::new(&id).expect("non-empty")])]);
            let mut mine = Vec::new();
            for r in 0..spec.relations {
                let rec = attr(&id, &label, &format!("R{r:02}"), &rel_label(r), &format!("x{t}y{i}z{r}"));
                records.push(rec.clone());
                mine.push(rec);
            }
            by_entity.push(mine);
        }
        for k in 0..spec.questions_per_table {
            let i = rng.random_range(0..spec.entities_per_table);
            let n_gold = if rng.random_bool(0.5) { 1 } else { 2 };
            let picked: Vec<&KbRecord> = by_entity[i].choose_multiple(&mut rng, n_gold).collect();
            let asks: Vec<String> = picked.iter().map(|r| r.property_label.clone()).collect();
            questions.push(Question {
                id: format!("m{t:03}_{k}"),
                table_id: format!("M{t:03}"),
                question: format!("what is the {} of person{t}x{i}", asks.join(" and ")),
                answer: match &picked[0].tail {
                    TailRecord::Value { text, .. } => text.clone(),
                    TailRecord::Entity { label, .. } => label.clone(),
                },
                answer_source: AnswerSource::InKb,
                gold_evidence: picked
                    .iter()
                    .map(|r| GoldEvidence {
                        row: i,
                        col: 0,
                        triple: r.to_triple().expect("valid record"),
                    })
                    .collect(),
            });
        }
        tables.push(Table::new(format!("M{t:03}"), vec!["Person".into()], rows).expect("rectangular"));
    }
    let store = SubGraphStore::from_records(records).expect("consistent labels");
    let corpus = Corpus::from_parts(&store, tables, questions, &default_excluded_datatypes())
        .expect("unique table ids");
    SyntheticCorpus {
        corpus,
        train: Vec::new(),
        dev: Vec::new(),
    }
}

/// Uniform draw in `[0, 1)` fixed by the pair's text.
pub fn pair_noise(p: &ScorePair) -> f64 {
    let h = fnv1a64(format!("{}\u{1f}{}\u{1f}{}", p.question, p.table, p.triple).as_bytes());
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Pair scorer that knows the gold triples: gold pairs score in
/// `[0.75, 1)`, all others in `[0, 0.8)`.
pub fn oracle_leaning_scorer(
    corpus: &Corpus,
) -> FnScorer<impl Fn(&ScorePair) -> f64 + Send + Sync + 'static> {
    let mut gold: BTreeSet<(String, String)> = BTreeSet::new();
    for q in &corpus.questions {
        let g = corpus.graph(&q.table_id).expect("question table exists");
        for tr in q.gold_triples() {
            let text = crate::serialize::serialize_triple(&tr, g.labels()).expect("labels").text;
            gold.insert((q.question.clone(), text));
        }
    }
    let gold = Arc::new(gold);
    FnScorer(move |p: &ScorePair| {
        let u = pair_noise(p);
        if gold.contains(&(p.question.clone(), p.triple.clone())) {
            0.75 + 0.25 * u
        } else {
            0.8 * u
        }
    })
}

/// Triples of every question's gold evidence, distinct.
pub fn gold_sets(questions: &[Question]) -> Vec<BTreeSet<Triple>> {
    questions.iter().map(|q| q.gold_triples().into_iter().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_shape() {
        let s = separable_corpus(&SeparableSpec::default(), 1);
        assert_eq!(s.train.len(), 300);
        assert_eq!(s.dev.len(), 100);
        assert_eq!(s.corpus.tables.len(), 20);
        assert!(s.corpus.graphs.values().all(|g| g.len() == 320));
        for q in s.train.iter().chain(&s.dev) {
            assert!(s.corpus.graph(&q.table_id).unwrap().contains(&q.gold_evidence[0].triple));
        }
        let again = separable_corpus(&SeparableSpec::default(), 1);
        assert_eq!(again.train, s.train);
    }

    #[test]
    fn multistage_shape() {
        let s = multistage_corpus(&MultistageSpec::default(), 3);
        assert_eq!(s.corpus.questions.len(), 200);
        assert!(s.corpus.graphs.values().all(|g| g.len() == 500));
        let scorer = oracle_leaning_scorer(&s.corpus);
        let q = &s.corpus.questions[0];
        let g = s.corpus.graph(&q.table_id).unwrap();
        let gold = crate::serialize::serialize_triple(&q.gold_evidence[0].triple, g.labels()).unwrap();
        let p = ScorePair {
            question: q.question.clone(),
            table: String::new(),
            triple: gold.text,
        };
        assert!((scorer.0)(&p) >= 0.75);
    }
}
