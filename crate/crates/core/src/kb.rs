//! Knowledge-base triples, label lookup and per-table one-hop sub-graphs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Datatypes dropped by [`filter_attributes`] unless configured otherwise.
pub const DEFAULT_EXCLUDED_DATATYPES: [&str; 2] = ["globe-coordinate", "url"];

#[derive(Debug, Error)]
pub enum KbError {
    #[error("line {line}: malformed record: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: invalid record: {reason}")]
    InvalidRecord { line: usize, reason: String },
    #[error("line {line}: conflicting labels for {id}: {existing:?} vs {new:?}")]
    LabelConflict {
        line: usize,
        id: String,
        existing: String,
        new: String,
    },
    #[error("no label for id {0}")]
    MissingLabel(String),
    #[error("entity set is empty")]
    EmptyEntitySet,
    #[error("empty identifier")]
    EmptyId,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Result<Self, KbError> {
                let id = id.into();
                if id.is_empty() {
                    return Err(KbError::EmptyId);
                }
                Ok(Self(id))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = KbError;
            fn try_from(s: String) -> Result<Self, KbError> {
                Self::new(s)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

string_id!(
    /// Opaque entity key such as a Wikidata `Q` identifier.
    EntityId
);
string_id!(
    /// Opaque relation or attribute key.
    PropertyId
);

/// Either another entity (relational triple) or a typed literal (attribute triple).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TripleTail {
    Entity(EntityId),
    Literal { datatype: String, text: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripleKind {
    Relational,
    Attribute,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub property: PropertyId,
    pub tail: TripleTail,
}

impl Triple {
    pub fn relational(head: EntityId, property: PropertyId, tail: EntityId) -> Self {
        Self {
            head,
            property,
            tail: TripleTail::Entity(tail),
        }
    }

    pub fn attribute(
        head: EntityId,
        property: PropertyId,
        datatype: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        Self {
            head,
            property,
            tail: TripleTail::Literal {
                datatype: datatype.into(),
                text: text.into(),
            },
        }
    }

    pub fn kind(&self) -> TripleKind {
        match self.tail {
            TripleTail::Entity(_) => TripleKind::Relational,
            TripleTail::Literal { .. } => TripleKind::Attribute,
        }
    }

    /// Stable textual key, also the deterministic tie-break order of every ranking.
    ///
    /// Relational: `head|property|tail`; attribute: `head|property|"text"^^datatype`.
    pub fn key(&self) -> String {
        match &self.tail {
            TripleTail::Entity(e) => format!("{}|{}|{}", self.head, self.property, e),
            TripleTail::Literal { datatype, text } => {
                format!("{}|{}|{:?}^^{}", self.head, self.property, text, datatype)
            }
        }
    }
}

/// Display label for every entity and property id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap(BTreeMap<String, String>);

impl LabelMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a label; an existing different label for the same id is a conflict.
    pub fn insert(&mut self, id: &str, label: &str) -> Result<(), (String, String)> {
        match self.0.get(id) {
            Some(existing) if existing != label => Err((existing.clone(), label.to_string())),
            Some(_) => Ok(()),
            None => {
                self.0.insert(id.to_string(), label.to_string());
                Ok(())
            }
        }
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.0.get(id).map(String::as_str)
    }

    pub fn require(&self, id: &str) -> Result<&str, KbError> {
        self.get(id).ok_or_else(|| KbError::MissingLabel(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Copy the labels `triple` needs from `self` into `dst`.
    fn copy_for(&self, triple: &Triple, dst: &mut LabelMap) {
        for id in referenced_ids(triple) {
            if let Some(l) = self.0.get(id) {
                dst.0.entry(id.to_string()).or_insert_with(|| l.clone());
            }
        }
    }
}

fn referenced_ids(triple: &Triple) -> impl Iterator<Item = &str> {
    let tail = match &triple.tail {
        TripleTail::Entity(e) => Some(e.as_str()),
        TripleTail::Literal { .. } => None,
    };
    [triple.head.as_str(), triple.property.as_str()]
        .into_iter()
        .chain(tail)
}

/// One line of `kb.jsonl`; also the triple payload of gold evidence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbRecord {
    pub head: String,
    pub head_label: String,
    pub property: String,
    pub property_label: String,
    pub tail: TailRecord,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TailRecord {
    Entity { id: String, label: String },
    Value { datatype: String, text: String },
}

impl KbRecord {
    pub fn to_triple(&self) -> Result<Triple, KbError> {
        let head = EntityId::new(self.head.clone())?;
        let property = PropertyId::new(self.property.clone())?;
        let tail = match &self.tail {
            TailRecord::Entity { id, .. } => TripleTail::Entity(EntityId::new(id.clone())?),
            TailRecord::Value { datatype, text } => {
                if text.is_empty() {
                    return Err(KbError::EmptyId);
                }
                TripleTail::Literal {
                    datatype: datatype.clone(),
                    text: text.clone(),
                }
            }
        };
        Ok(Triple {
            head,
            property,
            tail,
        })
    }

    /// Record for `triple`, labels resolved through `labels`.
    pub fn from_triple(triple: &Triple, labels: &LabelMap) -> Result<Self, KbError> {
        let tail = match &triple.tail {
            TripleTail::Entity(e) => TailRecord::Entity {
                id: e.to_string(),
                label: labels.require(e.as_str())?.to_string(),
            },
            TripleTail::Literal { datatype, text } => TailRecord::Value {
                datatype: datatype.clone(),
                text: text.clone(),
            },
        };
        Ok(Self {
            head: triple.head.to_string(),
            head_label: labels.require(triple.head.as_str())?.to_string(),
            property: triple.property.to_string(),
            property_label: labels.require(triple.property.as_str())?.to_string(),
            tail,
        })
    }

    fn labels(&self) -> impl Iterator<Item = (&str, &str)> {
        let tail = match &self.tail {
            TailRecord::Entity { id, label } => Some((id.as_str(), label.as_str())),
            TailRecord::Value { .. } => None,
        };
        [
            (self.head.as_str(), self.head_label.as_str()),
            (self.property.as_str(), self.property_label.as_str()),
        ]
        .into_iter()
        .chain(tail)
    }
}

/// Set of distinct triples plus the labels they reference.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SubGraph {
    triples: BTreeSet<Triple>,
    labels: LabelMap,
}

impl SubGraph {
    /// Build from triples, keeping only the labels they reference.
    /// Fails if a referenced id has no label.
    pub fn new(
        triples: impl IntoIterator<Item = Triple>,
        labels: &LabelMap,
    ) -> Result<Self, KbError> {
        let triples: BTreeSet<Triple> = triples.into_iter().collect();
        let mut own = LabelMap::new();
        for t in &triples {
            for id in referenced_ids(t) {
                own.0
                    .insert(id.to_string(), labels.require(id)?.to_string());
            }
        }
        Ok(Self {
            triples,
            labels: own,
        })
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Triples in their canonical (sorted) order.
    pub fn triples(&self) -> impl ExactSizeIterator<Item = &Triple> {
        self.triples.iter()
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.triples.contains(triple)
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    pub fn union(&self, other: &SubGraph) -> SubGraph {
        let mut out = self.clone();
        for t in &other.triples {
            other.labels.copy_for(t, &mut out.labels);
            out.triples.insert(t.clone());
        }
        out
    }

    pub fn to_records(&self) -> Vec<KbRecord> {
        self.triples
            .iter()
            .map(|t| KbRecord::from_triple(t, &self.labels).expect("labels complete by construction"))
            .collect()
    }

    /// Build from records (e.g. one table's persisted sub-graph), deduplicating.
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a KbRecord>) -> Result<Self, KbError> {
        let mut labels = LabelMap::new();
        let mut triples = BTreeSet::new();
        for (i, rec) in records.into_iter().enumerate() {
            for (id, label) in rec.labels() {
                labels
                    .insert(id, label)
                    .map_err(|(existing, new)| KbError::LabelConflict {
                        line: i + 1,
                        id: id.to_string(),
                        existing,
                        new,
                    })?;
            }
            triples.insert(rec.to_triple()?);
        }
        Ok(Self { triples, labels })
    }
}

/// Immutable head-indexed triple store.
#[derive(Clone, Debug, Default)]
pub struct SubGraphStore {
    by_head: BTreeMap<EntityId, BTreeSet<Triple>>,
    labels: LabelMap,
    len: usize,
}

/// Result of [`SubGraphStore::one_hop_subgraph`].
#[derive(Clone, Debug)]
pub struct OneHop {
    pub graph: SubGraph,
    /// Requested entities with no stored triples.
    pub unknown_entities: usize,
}

impl SubGraphStore {
    pub fn from_records(records: impl IntoIterator<Item = KbRecord>) -> Result<Self, KbError> {
        let mut store = Self::default();
        for (i, rec) in records.into_iter().enumerate() {
            store.add(i + 1, &rec)?;
        }
        Ok(store)
    }

    fn add(&mut self, line: usize, rec: &KbRecord) -> Result<(), KbError> {
        let triple = rec.to_triple().map_err(|e| KbError::InvalidRecord {
            line,
            reason: e.to_string(),
        })?;
        for (id, label) in rec.labels() {
            self.labels
                .insert(id, label)
                .map_err(|(existing, new)| KbError::LabelConflict {
                    line,
                    id: id.to_string(),
                    existing,
                    new,
                })?;
        }
        if self
            .by_head
            .entry(triple.head.clone())
            .or_default()
            .insert(triple)
        {
            self.len += 1;
        }
        Ok(())
    }

    /// Number of distinct triples.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.by_head.values().flatten()
    }

    pub fn headed_by(&self, head: &EntityId) -> impl Iterator<Item = &Triple> {
        self.by_head.get(head).into_iter().flatten()
    }

    /// Every stored triple whose head is in `entities`.
    pub fn one_hop_subgraph(&self, entities: &BTreeSet<EntityId>) -> Result<OneHop, KbError> {
        if entities.is_empty() {
            return Err(KbError::EmptyEntitySet);
        }
        let mut unknown = 0;
        let mut triples = Vec::new();
        for e in entities {
            match self.by_head.get(e) {
                Some(ts) => triples.extend(ts.iter().cloned()),
                None => unknown += 1,
            }
        }
        if unknown > 0 {
            log::warn!("{unknown} of {} entities have no triples", entities.len());
        }
        Ok(OneHop {
            graph: SubGraph::new(triples, &self.labels)?,
            unknown_entities: unknown,
        })
    }

    pub fn to_records(&self) -> Vec<KbRecord> {
        self.triples()
            .map(|t| KbRecord::from_triple(t, &self.labels).expect("labels complete by construction"))
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), KbError> {
        for rec in self.to_records() {
            serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Parse a `kb.jsonl` stream. Blank lines are skipped; duplicates collapse.
pub fn ingest_kb<R: BufRead>(source: R) -> Result<SubGraphStore, KbError> {
    let mut store = SubGraphStore::default();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: KbRecord = serde_json::from_str(&line).map_err(|source| KbError::Parse {
            line: line_no,
            source,
        })?;
        store.add(line_no, &rec)?;
    }
    Ok(store)
}

/// Drop attribute triples whose literal datatype is in `excluded`.
pub fn filter_attributes(g: &SubGraph, excluded: &BTreeSet<String>) -> SubGraph {
    let kept = g.triples().filter(|t| match &t.tail {
        TripleTail::Literal { datatype, .. } => !excluded.contains(datatype),
        TripleTail::Entity(_) => true,
    });
    SubGraph::new(kept.cloned(), &g.labels).expect("labels come from the same graph")
}

pub fn default_excluded_datatypes() -> BTreeSet<String> {
    DEFAULT_EXCLUDED_DATATYPES.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = include_str!("../fixtures/kb_small.jsonl");

    fn eid(s: &str) -> EntityId {
        EntityId::new(s).unwrap()
    }

    fn small() -> SubGraphStore {
        ingest_kb(SMALL.as_bytes()).unwrap()
    }

    fn set(ids: &[&str]) -> BTreeSet<EntityId> {
        ids.iter().map(|s| eid(s)).collect()
    }

    #[test]
    fn empty_stream_gives_empty_store() {
        let store = ingest_kb("".as_bytes()).unwrap();
        assert!(store.is_empty());
    }

    #[test]
    fn singleton_record() {
        let line = r#"{"head":"Q_KW","head_label":"Kanye West","property":"P_label","property_label":"record label","tail":{"kind":"entity","id":"Q_GM","label":"GOOD Music"}}"#;
        let store = ingest_kb(line.as_bytes()).unwrap();
        assert_eq!(store.len(), 1);
        let t = store.triples().next().unwrap();
        assert_eq!(
            *t,
            Triple::relational(eid("Q_KW"), PropertyId::new("P_label").unwrap(), eid("Q_GM"))
        );
        assert_eq!(store.labels().get("Q_GM"), Some("GOOD Music"));
    }

    #[test]
    fn fixture_dedups_to_eleven() {
        let raw_lines = SMALL.lines().filter(|l| !l.trim().is_empty()).count();
        assert_eq!(raw_lines, 12);
        // brute-force dedup on the parsed records
        let mut distinct: Vec<Triple> = Vec::new();
        for l in SMALL.lines().filter(|l| !l.trim().is_empty()) {
            let t = serde_json::from_str::<KbRecord>(l).unwrap().to_triple().unwrap();
            if !distinct.contains(&t) {
                distinct.push(t);
            }
        }
        assert_eq!(distinct.len(), 11);
        assert_eq!(small().len(), 11);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let input = format!("{}\nnot json\n", SMALL.lines().next().unwrap());
        match ingest_kb(input.as_bytes()) {
            Err(KbError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn conflicting_label_is_an_error() {
        let a = r#"{"head":"Q1","head_label":"A","property":"P1","property_label":"p","tail":{"kind":"value","datatype":"string","text":"x"}}"#;
        let b = r#"{"head":"Q1","head_label":"B","property":"P1","property_label":"p","tail":{"kind":"value","datatype":"string","text":"y"}}"#;
        let err = ingest_kb(format!("{a}\n{b}\n").as_bytes()).unwrap_err();
        assert!(matches!(err, KbError::LabelConflict { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_literal_rejected() {
        let a = r#"{"head":"Q1","head_label":"A","property":"P1","property_label":"p","tail":{"kind":"value","datatype":"string","text":""}}"#;
        assert!(matches!(
            ingest_kb(a.as_bytes()),
            Err(KbError::InvalidRecord { line: 1, .. })
        ));
    }

    #[test]
    fn one_hop_matches_linear_scan() {
        let store = small();
        let hop = store.one_hop_subgraph(&set(&["Q_KW"])).unwrap();
        let scan: BTreeSet<Triple> = store
            .triples()
            .filter(|t| t.head.as_str() == "Q_KW")
            .cloned()
            .collect();
        assert_eq!(scan.len(), 3);
        assert_eq!(hop.graph.triples().cloned().collect::<BTreeSet<_>>(), scan);

        let all: BTreeSet<EntityId> = store.triples().map(|t| t.head.clone()).collect();
        let whole = store.one_hop_subgraph(&all).unwrap();
        assert_eq!(whole.graph.len(), store.len());
    }

    #[test]
    fn unknown_entities_are_counted() {
        let hop = small().one_hop_subgraph(&set(&["Q_NOPE"])).unwrap();
        assert!(hop.graph.is_empty());
        assert_eq!(hop.unknown_entities, 1);
        assert!(matches!(
            small().one_hop_subgraph(&BTreeSet::new()),
            Err(KbError::EmptyEntitySet)
        ));
    }

    #[test]
    fn filter_attribute_datatypes() {
        let store = small();
        let all: BTreeSet<EntityId> = store.triples().map(|t| t.head.clone()).collect();
        let g = store.one_hop_subgraph(&all).unwrap().graph;
        assert_eq!(filter_attributes(&g, &BTreeSet::new()), g);
        let f = filter_attributes(&g, &default_excluded_datatypes());
        assert_eq!(f.len(), g.len() - 2);

        let every: BTreeSet<String> = g
            .triples()
            .filter_map(|t| match &t.tail {
                TripleTail::Literal { datatype, .. } => Some(datatype.clone()),
                _ => None,
            })
            .collect();
        let only_rel = filter_attributes(&g, &every);
        assert!(only_rel.triples().all(|t| t.kind() == TripleKind::Relational));
        assert_eq!(
            only_rel.len(),
            g.triples().filter(|t| t.kind() == TripleKind::Relational).count()
        );
    }

    #[test]
    fn jsonl_roundtrip_preserves_distinct_triples() {
        let store = small();
        let mut buf = Vec::new();
        store.write_jsonl(&mut buf).unwrap();
        let again = ingest_kb(buf.as_slice()).unwrap();
        assert_eq!(
            again.triples().collect::<Vec<_>>(),
            store.triples().collect::<Vec<_>>()
        );
        assert_eq!(again.labels(), store.labels());
    }

    #[test]
    fn keys_distinguish_tails() {
        let h = eid("Q1");
        let p = PropertyId::new("P1").unwrap();
        let a = Triple::attribute(h.clone(), p.clone(), "string", "Q2");
        let b = Triple::relational(h, p, eid("Q2"));
        assert_ne!(a.key(), b.key());
        assert_eq!(b.key(), "Q1|P1|Q2");
        assert_eq!(a.key(), "Q1|P1|\"Q2\"^^string");
    }
}
