//! Per-table triple index: one context vector per distinct sub-graph triple,
//! computed offline and persisted in a versioned little-endian binary file.
//!
//! File layout (all integers little-endian, strings `u32` length + UTF-8):
//!
//! ```text
//! magic "KBTQIDX\0" | version u32 | scalar tag str | dim u32 | table id str
//! | fingerprint str | count u64 | count × (triple, dim × scalar)
//! triple := head str | property str | 0u8 id str  |  1u8 datatype str text str
//! ```

use std::path::Path;

use super::embed::EmbeddingProvider;
use super::RetrieveError;
use crate::kb::{EntityId, PropertyId, SubGraph, Triple, TripleTail};
use crate::scalar::Scalar;
use crate::serialize::build_retrieval_context;
use crate::table::{triple_related_subtable, Table};

const MAGIC: &[u8; 8] = b"KBTQIDX\0";
const VERSION: u32 = 1;
const EMBED_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry<S> {
    pub triple: Triple,
    pub key: String,
    pub vector: Vec<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripleIndex<S = f64> {
    pub table_id: String,
    pub fingerprint: String,
    pub dim: usize,
    pub entries: Vec<IndexEntry<S>>,
}

impl<S: Scalar> TripleIndex<S> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, S::TAG);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        put_str(&mut out, &self.table_id);
        put_str(&mut out, &self.fingerprint);
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            put_str(&mut out, e.triple.head.as_str());
            put_str(&mut out, e.triple.property.as_str());
            match &e.triple.tail {
                TripleTail::Entity(id) => {
                    out.push(0);
                    put_str(&mut out, id.as_str());
                }
                TripleTail::Literal { datatype, text } => {
                    out.push(1);
                    put_str(&mut out, datatype);
                    put_str(&mut out, text);
                }
            }
            for &x in &e.vector {
                x.write_le(&mut out);
            }
        }
        out
    }

    /// Decode; `expected_fingerprint` (when given) must match the header.
    pub fn from_bytes(bytes: &[u8], expected_fingerprint: Option<&str>) -> Result<Self, RetrieveError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(RetrieveError::IndexFormat("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(RetrieveError::IndexFormat(format!("unsupported version {version}")));
        }
        let tag = r.string()?;
        if tag != S::TAG {
            return Err(RetrieveError::IndexFormat(format!(
                "scalar type {tag}, expected {}",
                S::TAG
            )));
        }
        let dim = r.u32()? as usize;
        let table_id = r.string()?;
        let fingerprint = r.string()?;
        if let Some(expected) = expected_fingerprint {
            if expected != fingerprint {
                return Err(RetrieveError::FingerprintMismatch {
                    expected: expected.to_string(),
                    found: fingerprint,
                });
            }
        }
        let count = r.u64()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let head = EntityId::new(r.string()?)?;
            let property = PropertyId::new(r.string()?)?;
            let tail = match r.take(1)?[0] {
                0 => TripleTail::Entity(EntityId::new(r.string()?)?),
                1 => TripleTail::Literal {
                    datatype: r.string()?,
                    text: r.string()?,
                },
                b => return Err(RetrieveError::IndexFormat(format!("bad tail tag {b}"))),
            };
            let triple = Triple {
                head,
                property,
                tail,
            };
            let raw = r.take(dim * S::WIDTH)?;
            let vector = raw.chunks_exact(S::WIDTH).map(S::read_le).collect();
            entries.push(IndexEntry {
                key: triple.key(),
                triple,
                vector,
            });
        }
        if r.pos != bytes.len() {
            return Err(RetrieveError::IndexFormat("trailing bytes".into()));
        }
        Ok(Self {
            table_id,
            fingerprint,
            dim,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrieveError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path, expected_fingerprint: Option<&str>) -> Result<Self, RetrieveError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes, expected_fingerprint)
    }
}

/// Embed every triple of `g` with its triple-related sub-table as context.
pub fn build_index<S, P>(g: &SubGraph, t: &Table, provider: &P) -> Result<TripleIndex<S>, RetrieveError>
where
    S: Scalar,
    P: EmbeddingProvider<S> + ?Sized,
{
    if g.is_empty() {
        return Err(RetrieveError::EmptySubGraph);
    }
    let dim = provider.dim();
    let triples: Vec<&Triple> = g.triples().collect();
    let mut contexts = Vec::with_capacity(triples.len());
    for tr in &triples {
        let sub = triple_related_subtable(t, tr);
        contexts.push(build_retrieval_context(&sub, tr, g.labels())?.text);
    }
    let mut entries = Vec::with_capacity(triples.len());
    for (chunk_t, chunk_c) in triples.chunks(EMBED_CHUNK).zip(contexts.chunks(EMBED_CHUNK)) {
        let vectors = match provider.embed_batch(chunk_c, super::EmbedMode::Context) {
            Ok(v) if v.len() == chunk_c.len() => v,
            _ => {
                // find the offending triple
                let mut v = Vec::with_capacity(chunk_c.len());
                for (tr, ctx) in chunk_t.iter().zip(chunk_c) {
                    v.push(provider.embed_context(ctx).map_err(|e| RetrieveError::Provider {
                        key: tr.key(),
                        message: e.0,
                    })?);
                }
                v
            }
        };
        for (tr, vector) in chunk_t.iter().zip(vectors) {
            if vector.len() != dim || vector.iter().any(|x| !x.is_finite()) {
                return Err(RetrieveError::Provider {
                    key: tr.key(),
                    message: format!("bad vector (len {}, expected {dim})", vector.len()),
                });
            }
            entries.push(IndexEntry {
                triple: (*tr).clone(),
                key: tr.key(),
                vector,
            });
        }
    }
    Ok(TripleIndex {
        table_id: t.id.clone(),
        fingerprint: provider.fingerprint(),
        dim,
        entries,
    })
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RetrieveError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| RetrieveError::IndexFormat("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, RetrieveError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, RetrieveError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, RetrieveError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| RetrieveError::IndexFormat("invalid utf-8".into()))
    }
}
