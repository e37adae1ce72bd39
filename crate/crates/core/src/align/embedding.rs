//! Embedding tables keyed by sample id, with the EMB1 binary format:
//! magic "EMB1", u32 LE count, u32 LE dim, then per entry a u16 LE id
//! length, the UTF-8 id bytes, and dim float32 LE values. Entries are
//! written in sorted id order so saves are byte-reproducible.

use std::collections::BTreeMap;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::AlignError;

/// Fixed-dimension vectors keyed by id. Vectors are produced by external
/// encoders and ingested from files; this crate never computes them.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    entries: BTreeMap<String, Vec<f32>>,
    dim: usize,
    pub provider_tag: String,
}

impl EmbeddingTable {
    pub fn new(dim: usize, provider_tag: impl Into<String>) -> Self {
        Self {
            entries: BTreeMap::new(),
            dim,
            provider_tag: provider_tag.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<(), AlignError> {
        if vector.len() != self.dim {
            return Err(AlignError::DimMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(AlignError::NonFinite);
        }
        self.entries.insert(id.into(), vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    /// Entries in sorted id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Cosine similarity a.b / (|a| |b|); both vectors must be nonzero and of
/// equal dimension.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64, AlignError> {
    if a.len() != b.len() {
        return Err(AlignError::DimMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(AlignError::ZeroNorm);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

pub fn emb_to_bytes(table: &EmbeddingTable) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"EMB1");
    out.write_u32::<LittleEndian>(table.len() as u32).unwrap();
    out.write_u32::<LittleEndian>(table.dim() as u32).unwrap();
    for (id, vector) in table.iter() {
        let id_bytes = id.as_bytes();
        out.write_u16::<LittleEndian>(id_bytes.len() as u16).unwrap();
        out.extend_from_slice(id_bytes);
        for &v in vector {
            out.write_f32::<LittleEndian>(v).unwrap();
        }
    }
    out
}

pub fn emb_from_bytes(bytes: &[u8], provider_tag: &str) -> Result<EmbeddingTable, AlignError> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| AlignError::Format("stream shorter than magic".into()))?;
    if &magic != b"EMB1" {
        return Err(AlignError::Format("bad magic, expected EMB1".into()));
    }
    let count = r
        .read_u32::<LittleEndian>()
        .map_err(|_| AlignError::Format("truncated count".into()))? as usize;
    let dim = r
        .read_u32::<LittleEndian>()
        .map_err(|_| AlignError::Format("truncated dim".into()))? as usize;
    let mut table = EmbeddingTable::new(dim, provider_tag);
    for i in 0..count {
        let id_len = r
            .read_u16::<LittleEndian>()
            .map_err(|_| AlignError::Format(format!("truncated id length of entry {i}")))?
            as usize;
        let mut id_bytes = vec![0u8; id_len];
        r.read_exact(&mut id_bytes)
            .map_err(|_| AlignError::Format(format!("truncated id of entry {i}")))?;
        let id = String::from_utf8(id_bytes)
            .map_err(|_| AlignError::Format(format!("entry {i} id is not UTF-8")))?;
        let mut vector = vec![0.0f32; dim];
        for (j, v) in vector.iter_mut().enumerate() {
            *v = r.read_f32::<LittleEndian>().map_err(|_| {
                AlignError::Format(format!("truncated value {j} of entry {i} ({id})"))
            })?;
        }
        table.insert(id, vector)?;
    }
    Ok(table)
}

pub fn save_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<(), AlignError> {
    let path = path.as_ref();
    std::fs::write(path, emb_to_bytes(table)).map_err(|e| AlignError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable, AlignError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| AlignError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    emb_from_bytes(&bytes, &tag)
}

/// Deterministic fallback embedder: feature-hashed unigram counts over
/// lowercase alphabetic tokens, 256 dimensions, L2-normalized. Exists so
/// the matcher and the keyword statistics stay testable without external
/// encoder output; real runs should ingest EMB1 files instead.
pub const HASHED_EMBEDDING_DIM: usize = 256;

pub fn hashed_embedding(text: &str) -> Vec<f32> {
    let mut counts = vec![0.0f32; HASHED_EMBEDDING_DIM];
    for token in tokenize(text) {
        counts[fnv1a(token.as_bytes()) as usize % HASHED_EMBEDDING_DIM] += 1.0;
    }
    let norm = counts.iter().map(|c| c * c).sum::<f32>().sqrt();
    if norm > 0.0 {
        for c in &mut counts {
            *c /= norm;
        }
    }
    counts
}

/// Lowercase alphabetic runs.
pub(crate) fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphabetic() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// FNV-1a with a fixed seed; hashing must be stable across builds.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
