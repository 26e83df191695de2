//! Entity-linked tables, questions and gold evidence.

use std::collections::BTreeSet;
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{EntityId, KbError, KbRecord, Triple};

#[derive(Debug, Error)]
pub enum TableError {
    #[error("table {table}: row {row} has {got} cells, expected {expected}")]
    Ragged {
        table: String,
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("table {0}: no data rows")]
    NoRows(String),
    #[error("table {table}: cell ({row}, {col}) links {id} twice")]
    DuplicateLink {
        table: String,
        row: usize,
        col: usize,
        id: String,
    },
    #[error("line {line}: malformed record: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {source}")]
    Kb {
        line: usize,
        #[source]
        source: KbError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub text: String,
    #[serde(default)]
    pub links: Vec<EntityId>,
}

impl Cell {
    pub fn plain(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            links: Vec::new(),
        }
    }

    pub fn linked(text: impl Into<String>, links: impl IntoIterator<Item = EntityId>) -> Self {
        Self {
            text: text.into(),
            links: links.into_iter().collect(),
        }
    }

    pub fn links_to(&self, e: &EntityId) -> bool {
        self.links.contains(e)
    }
}

/// Header row plus a rectangular grid of cells.
///
/// Tables read from disk carry at least one row; sub-tables derived from
/// them may be empty-bodied.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TableRecord")]
pub struct Table {
    pub id: String,
    headers: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

/// Raw `tables.jsonl` line.
#[derive(Deserialize)]
struct TableRecord {
    id: String,
    headers: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl TryFrom<TableRecord> for Table {
    type Error = TableError;
    fn try_from(r: TableRecord) -> Result<Self, TableError> {
        Table::new(r.id, r.headers, r.rows)
    }
}

impl Table {
    pub fn new(
        id: impl Into<String>,
        headers: Vec<String>,
        rows: Vec<Vec<Cell>>,
    ) -> Result<Self, TableError> {
        let id = id.into();
        if rows.is_empty() {
            return Err(TableError::NoRows(id));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != headers.len() {
                return Err(TableError::Ragged {
                    table: id,
                    row: r,
                    expected: headers.len(),
                    got: row.len(),
                });
            }
            for (c, cell) in row.iter().enumerate() {
                let mut seen = BTreeSet::new();
                if let Some(dup) = cell.links.iter().find(|e| !seen.insert(*e)) {
                    return Err(TableError::DuplicateLink {
                        table: id,
                        row: r,
                        col: c,
                        id: dup.to_string(),
                    });
                }
            }
        }
        Ok(Self { id, headers, rows })
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.headers.len()
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&Cell> {
        self.rows.get(row).and_then(|r| r.get(col))
    }

    pub fn cells(&self) -> impl Iterator<Item = &Cell> {
        self.rows.iter().flatten()
    }

    fn with_rows(&self, rows: Vec<Vec<Cell>>) -> Table {
        Table {
            id: self.id.clone(),
            headers: self.headers.clone(),
            rows,
        }
    }
}

/// Union of the entities linked from any cell.
pub fn linked_entities(t: &Table) -> BTreeSet<EntityId> {
    t.cells().flat_map(|c| c.links.iter().cloned()).collect()
}

/// What [`triple_related_subtable_with`] returns when no row links the head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyMatch {
    #[default]
    EmptyBody,
    FullTable,
}

/// Rows with at least one cell linking `triple.head`, in original order.
pub fn triple_related_subtable(t: &Table, triple: &Triple) -> Table {
    triple_related_subtable_with(t, triple, EmptyMatch::EmptyBody)
}

pub fn triple_related_subtable_with(t: &Table, triple: &Triple, fallback: EmptyMatch) -> Table {
    let rows: Vec<Vec<Cell>> = t
        .rows
        .iter()
        .filter(|row| row.iter().any(|c| c.links_to(&triple.head)))
        .cloned()
        .collect();
    if rows.is_empty() && fallback == EmptyMatch::FullTable {
        return t.clone();
    }
    t.with_rows(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    InKb,
    InTable,
    Calculated,
}

impl fmt::Display for AnswerSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnswerSource::InKb => "in_kb",
            AnswerSource::InTable => "in_table",
            AnswerSource::Calculated => "calculated",
        })
    }
}

/// A cell coordinate (0-based) paired with the triple it supports.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldEvidence {
    pub row: usize,
    pub col: usize,
    pub triple: Triple,
}

/// One annotated question.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Question {
    pub id: String,
    pub table_id: String,
    pub question: String,
    pub answer: String,
    pub answer_source: AnswerSource,
    pub gold_evidence: Vec<GoldEvidence>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub row: usize,
    pub col: usize,
    pub triple: KbRecord,
}

/// Raw `questions.jsonl` line.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub table_id: String,
    pub question: String,
    pub answer: String,
    pub answer_source: AnswerSource,
    #[serde(default)]
    pub gold_evidence: Vec<EvidenceRecord>,
}

impl QuestionRecord {
    pub fn to_question(&self) -> Result<Question, KbError> {
        let gold_evidence = self
            .gold_evidence
            .iter()
            .map(|e| {
                Ok(GoldEvidence {
                    row: e.row,
                    col: e.col,
                    triple: e.triple.to_triple()?,
                })
            })
            .collect::<Result<_, KbError>>()?;
        Ok(Question {
            id: self.id.clone(),
            table_id: self.table_id.clone(),
            question: self.question.clone(),
            answer: self.answer.clone(),
            answer_source: self.answer_source,
            gold_evidence,
        })
    }
}

impl Question {
    /// Distinct gold triples, first-occurrence order.
    pub fn gold_triples(&self) -> Vec<Triple> {
        let mut out: Vec<Triple> = Vec::new();
        for e in &self.gold_evidence {
            if !out.contains(&e.triple) {
                out.push(e.triple.clone());
            }
        }
        out
    }
}

fn read_jsonl<R: BufRead, T, F>(source: R, mut convert: F) -> Result<Vec<T>, TableError>
where
    F: FnMut(usize, &str) -> Result<T, TableError>,
{
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(convert(i + 1, &line)?);
    }
    Ok(out)
}

pub fn read_tables<R: BufRead>(source: R) -> Result<Vec<Table>, TableError> {
    read_jsonl(source, |line, s| {
        serde_json::from_str(s).map_err(|source| TableError::Parse { line, source })
    })
}

pub fn read_questions<R: BufRead>(source: R) -> Result<Vec<Question>, TableError> {
    read_jsonl(source, |line, s| {
        let rec: QuestionRecord =
            serde_json::from_str(s).map_err(|source| TableError::Parse { line, source })?;
        rec.to_question()
            .map_err(|source| TableError::Kb { line, source })
    })
}
