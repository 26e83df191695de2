//! The linear bi-encoder and its model file.
//!
//! File layout (little-endian, strings `u32` length + UTF-8):
//!
//! ```text
//! magic "KBTQLIN\0" | version u32 | scalar tag str | base hasher str | dim u32
//! | W_q (dim × dim, row-major) | W_c (dim × dim, row-major)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::TrainError;
use crate::retrieve::{EmbedMode, EmbeddingProvider, HashingEmbedder, ProviderError};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"KBTQLIN\0";
const VERSION: u32 = 1;
const BASE: &str = "hashing-fnv1a-v1";

/// `E_q(x) = W_q h(x)` and `E_c(x) = W_c h(x)` over hashing features `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearEmbedder<S: Scalar = f64> {
    base: HashingEmbedder<S>,
    wq: Array2<S>,
    wc: Array2<S>,
    fingerprint: String,
}

impl<S: Scalar> LinearEmbedder<S> {
    /// Both projections set to identity: embeds exactly like the base hasher.
    pub fn identity(dim: usize) -> Result<Self, ProviderError> {
        Self::from_projections(Array2::eye(dim), Array2::eye(dim))
    }

    pub fn from_projections(wq: Array2<S>, wc: Array2<S>) -> Result<Self, ProviderError> {
        let d = wq.nrows();
        if wq.dim() != (d, d) || wc.dim() != (d, d) {
            return Err(ProviderError::new(format!(
                "projections must be square and equal: {:?} vs {:?}",
                wq.dim(),
                wc.dim()
            )));
        }
        let base = HashingEmbedder::new(d)?;
        let m = Self {
            base,
            wq,
            wc,
            fingerprint: String::new(),
        };
        if !m.is_finite() {
            return Err(ProviderError::new("projection has non-finite entries"));
        }
        Ok(m.finish())
    }

    pub fn wq(&self) -> &Array2<S> {
        &self.wq
    }

    pub fn wc(&self) -> &Array2<S> {
        &self.wc
    }

    pub fn is_finite(&self) -> bool {
        self.wq.iter().chain(self.wc.iter()).all(|x| x.is_finite())
    }

    /// `W -= step * grad` on both projections. Leaves the fingerprint stale
    /// until [`finish`](Self::finish).
    pub(crate) fn apply_step(&mut self, gq: &Array2<S>, gc: &Array2<S>, step: S) {
        self.wq.scaled_add(-step, gq);
        self.wc.scaled_add(-step, gc);
    }

    pub(crate) fn finish(mut self) -> Self {
        let digest = Sha256::digest(self.to_bytes());
        let mut hex = String::new();
        for b in digest.iter().take(8) {
            let _ = write!(hex, "{b:02x}");
        }
        self.fingerprint = format!("linear-v1:dim={}:{}:{hex}", self.base.dim(), S::TAG);
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, S::TAG);
        put_str(&mut out, BASE);
        out.extend_from_slice(&(self.base.dim() as u32).to_le_bytes());
        for x in self.wq.iter().chain(self.wc.iter()) {
            x.write_le(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(TrainError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(TrainError::Format(format!("unsupported version {version}")));
        }
        let tag = r.string()?;
        if tag != S::TAG {
            return Err(TrainError::Format(format!("scalar {tag}, expected {}", S::TAG)));
        }
        let base = r.string()?;
        if base != BASE {
            return Err(TrainError::Format(format!("unknown base hasher {base}")));
        }
        let d = r.u32()? as usize;
        let mut read = || -> Result<Array2<S>, TrainError> {
            let raw = r.take(d * d * S::WIDTH)?;
            let v: Vec<S> = raw.chunks_exact(S::WIDTH).map(S::read_le).collect();
            Ok(Array2::from_shape_vec((d, d), v).expect("length checked"))
        };
        let wq = read()?;
        let wc = read()?;
        if r.pos != bytes.len() {
            return Err(TrainError::Format("trailing bytes".into()));
        }
        Self::from_projections(wq, wc).map_err(|e| TrainError::Format(e.0))
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl<S: Scalar> EmbeddingProvider<S> for LinearEmbedder<S> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn embed(&self, text: &str, mode: EmbedMode) -> Result<Vec<S>, ProviderError> {
        let h = ndarray::Array1::from(self.base.features(text));
        let w = match mode {
            EmbedMode::Query => &self.wq,
            EmbedMode::Context => &self.wc,
        };
        Ok(w.dot(&h).to_vec())
    }
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
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TrainError::Format("truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String, TrainError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| TrainError::Format("invalid utf-8".into()))
    }
}
