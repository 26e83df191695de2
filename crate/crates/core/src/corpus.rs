//! Loading a whole benchmark: KB store, tables, questions, and the filtered
//! one-hop sub-graph of every table.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use thiserror::Error;

use crate::kb::{filter_attributes, ingest_kb, KbError, SubGraph, SubGraphStore};
use crate::table::{linked_entities, read_questions, read_tables, Question, Table, TableError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Kb {
        path: String,
        #[source]
        source: KbError,
    },
    #[error("{path}: {source}")]
    Table {
        path: String,
        #[source]
        source: TableError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate table id {0}")]
    DuplicateTable(String),
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub tables: BTreeMap<String, Table>,
    /// Filtered one-hop sub-graph per table id.
    pub graphs: BTreeMap<String, SubGraph>,
    pub questions: Vec<Question>,
}

fn open(path: &Path) -> Result<BufReader<File>, CorpusError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
}

impl Corpus {
    pub fn load(
        kb: &Path,
        tables: &Path,
        questions: Option<&Path>,
        excluded_datatypes: &BTreeSet<String>,
    ) -> Result<Self, CorpusError> {
        let store = ingest_kb(open(kb)?).map_err(|source| CorpusError::Kb {
            path: kb.display().to_string(),
            source,
        })?;
        let tables_v = read_tables(open(tables)?).map_err(|source| CorpusError::Table {
            path: tables.display().to_string(),
            source,
        })?;
        let questions_v = match questions {
            Some(p) => read_questions(open(p)?).map_err(|source| CorpusError::Table {
                path: p.display().to_string(),
                source,
            })?,
            None => Vec::new(),
        };
        Self::from_parts(&store, tables_v, questions_v, excluded_datatypes)
    }

    pub fn from_parts(
        store: &SubGraphStore,
        tables: Vec<Table>,
        questions: Vec<Question>,
        excluded_datatypes: &BTreeSet<String>,
    ) -> Result<Self, CorpusError> {
        let mut out = Corpus {
            questions,
            ..Default::default()
        };
        for t in tables {
            let entities = linked_entities(&t);
            let graph = if entities.is_empty() {
                SubGraph::default()
            } else {
                let hop = store
                    .one_hop_subgraph(&entities)
                    .map_err(|source| CorpusError::Kb {
                        path: format!("table {}", t.id),
                        source,
                    })?;
                filter_attributes(&hop.graph, excluded_datatypes)
            };
            if out.tables.contains_key(&t.id) {
                return Err(CorpusError::DuplicateTable(t.id));
            }
            out.graphs.insert(t.id.clone(), graph);
            out.tables.insert(t.id.clone(), t);
        }
        Ok(out)
    }

    pub fn table(&self, id: &str) -> Option<&Table> {
        self.tables.get(id)
    }

    pub fn graph(&self, id: &str) -> Option<&SubGraph> {
        self.graphs.get(id)
    }
}
