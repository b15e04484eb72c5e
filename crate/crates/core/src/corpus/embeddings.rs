use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use super::{create_writer, finish_writer};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";
const EMBEDDING_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 8;

/// Fixed-dimension vectors keyed by utterance id, stored row-major.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl PartialEq for EmbeddingSet {
    /// Bit-level equality of the vectors, so `-0.0 != 0.0`.
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.ids == other.ids
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingSet {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn push(&mut self, id: impl Into<String>, vector: &[f32]) -> Result<()> {
        let id = id.into();
        if id.is_empty() || id.len() > u16::MAX as usize {
            return Err(Error::Format(format!("invalid embedding id `{id}`")));
        }
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector for `{id}` has {} components, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if let Some(bad) = vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("component {bad} of `{id}` is not finite")));
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.vector(i))
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.data.chunks_exact(self.dim))
    }

    /// Row-major `len × dim` matrix.
    pub fn as_matrix(&self) -> &[f32] {
        &self.data
    }

    /// Copy with every vector scaled to unit length; zero vectors are an error.
    pub fn l2_normalized(&self) -> Result<EmbeddingSet> {
        let mut out = EmbeddingSet::new(self.dim)?;
        for (id, v) in self.iter() {
            let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Norm(format!("embedding `{id}` is zero")));
            }
            let scaled: Vec<f32> = v.iter().map(|&x| (f64::from(x) / norm) as f32).collect();
            out.push(id, &scaled)?;
        }
        Ok(out)
    }
}

pub fn write_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create_writer(path)?;
    w.write_all(&encode(set)).map_err(|e| Error::io(path, e))?;
    finish_writer(w, path)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub(crate) fn encode(set: &EmbeddingSet) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + set.len() * (2 + 16 + 4 * set.dim));
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    buf.extend_from_slice(&(set.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for (id, v) in set.iter() {
        buf.extend_from_slice(&(id.len() as u16).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::CorruptFile(format!("truncated {what} at byte {}", self.pos))),
        }
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<EmbeddingSet> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != EMBEDDING_MAGIC {
        return Err(Error::Format("missing EMB1 magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != EMBEDDING_VERSION {
        return Err(Error::Format(format!("unsupported embedding file version {version}")));
    }
    let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
    let mut set = EmbeddingSet::new(dim)?;
    let mut cur = Cursor { bytes, pos: HEADER_LEN };
    let mut vector = vec![0f32; dim];
    for _ in 0..count {
        let len = u16::from_le_bytes(cur.take(2, "id length")?.try_into().unwrap()) as usize;
        let id = std::str::from_utf8(cur.take(len, "id")?)
            .map_err(|_| Error::CorruptFile("id is not valid UTF-8".into()))?;
        let raw = cur.take(4 * dim, "vector")?;
        for (v, chunk) in vector.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        set.push(id, &vector).map_err(|e| Error::CorruptFile(e.to_string()))?;
    }
    if cur.pos != bytes.len() {
        return Err(Error::CorruptFile(format!(
            "{} trailing bytes after {count} records",
            bytes.len() - cur.pos
        )));
    }
    Ok(set)
}
