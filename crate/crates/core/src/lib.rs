//! Knowledge-base augmented table question answering.
//!
//! Tables whose cells link to KB entities are paired with the one-hop
//! sub-graph of those entities. Questions are answered by retrieving the
//! relevant triples (dense retrieval, then cross-encoder re-ranking) and
//! handing question, table and triples to an external generative reasoner.
//!
//! Modules:
//!
//! * [`kb`]: triples, labels, one-hop sub-graph extraction and filtering
//! * [`table`]: entity-linked tables, questions, gold evidence
//! * [`serialize`]: text layouts for triples, tables and reasoner inputs
//! * [`retrieve`]: embedders, indexes, bi-/cross-encoder and multistage retrieval
//! * [`dataset`]: negative sampling, training instances, filters, validation, splits
//! * [`train`]: contrastive loss and a trainable linear bi-encoder
//! * [`eval`]: Recall@k, EM/F1, answer-source classification
//! * [`app`]: few-shot selection and the retrieve-then-generate pipeline
//!
//! Vector math is generic over [`Scalar`] (`f32`/`f64`); the aliases below
//! fix the common instantiations.

pub mod app;
pub mod corpus;
pub mod dataset;
pub mod eval;
pub mod kb;
pub mod retrieve;
pub mod scalar;
pub mod serialize;
pub mod synthetic;
pub mod table;
pub mod text;
pub mod train;

pub use scalar::Scalar;

/// Default scalar for training and evaluation.
pub type Real = f64;

pub type HashingEmbedderF32 = retrieve::HashingEmbedder<f32>;
pub type HashingEmbedderF64 = retrieve::HashingEmbedder<f64>;
pub type TripleIndexF32 = retrieve::TripleIndex<f32>;
pub type TripleIndexF64 = retrieve::TripleIndex<f64>;
pub type LinearEmbedderF32 = train::LinearEmbedder<f32>;
pub type LinearEmbedderF64 = train::LinearEmbedder<f64>;
pub type MultistageRetrieverF64 = retrieve::MultistageRetriever<f64>;
