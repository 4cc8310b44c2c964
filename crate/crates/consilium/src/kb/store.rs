//! Binary persistence for [`VectorIndex`]. The format is little-endian and
//! versioned:
//!
//! ```text
//! magic    [u8; 8]  = "CNSIDX01"
//! version  u32      = 1
//! role     u8       (0 = doctor, 1 = pharmacist)
//! dim      u32
//! n_chunks u64
//! n_entries u64
//! chunks   n_chunks records in ascending chunk_id order:
//!            chunk_id str, doc_id str, text str, start u64, end u64
//! entries  n_entries records in insertion (ranking tie-break) order:
//!            chunk_id str, vec_len u32, vec_len f32 values
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8 bytes. Floats round-trip
//! bit-exactly, so loading and re-persisting an index reproduces the file.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{Chunk, EmbeddingVector, VectorIndex};
use crate::types::Role;

pub const INDEX_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CNSIDX01";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic; not an index file")]
    BadMagic,
    #[error("unsupported index format version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown role byte {0}")]
    BadRole(u8),
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("vector dim mismatch: header says {expected}, entry has {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid utf-8 in {0}")]
    Utf8(&'static str),
    #[error("inconsistent index: {0}")]
    Inconsistent(String),
}

fn role_byte(role: Role) -> u8 {
    match role {
        Role::Doctor => 0,
        Role::Pharmacist => 1,
    }
}

fn role_from_byte(byte: u8) -> Result<Role, StoreError> {
    match byte {
        0 => Ok(Role::Doctor),
        1 => Ok(Role::Pharmacist),
        other => Err(StoreError::BadRole(other)),
    }
}

fn write_str(w: &mut impl Write, s: &str) -> Result<(), StoreError> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn persist_index(index: &VectorIndex, path: &Path) -> Result<(), StoreError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&INDEX_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[role_byte(index.role_scope())])?;
    w.write_all(&(index.dim() as u32).to_le_bytes())?;

    let chunks: Vec<&Chunk> = {
        let mut ids: Vec<&str> = index.chunk_ids();
        ids.sort_unstable();
        ids.iter()
            .map(|id| index.chunk(id).expect("entry resolvable"))
            .collect()
    };
    w.write_all(&(chunks.len() as u64).to_le_bytes())?;
    w.write_all(&(index.len() as u64).to_le_bytes())?;

    for chunk in chunks {
        write_str(&mut w, &chunk.chunk_id)?;
        write_str(&mut w, &chunk.doc_id)?;
        write_str(&mut w, &chunk.text)?;
        w.write_all(&(chunk.start as u64).to_le_bytes())?;
        w.write_all(&(chunk.end as u64).to_le_bytes())?;
    }
    for (chunk_id, vector) in index.entries() {
        write_str(&mut w, chunk_id)?;
        w.write_all(&(vector.dim() as u32).to_le_bytes())?;
        for v in vector.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn exact(&mut self, buf: &mut [u8], what: &'static str) -> Result<(), StoreError> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => StoreError::Truncated(what),
            _ => StoreError::Io(e),
        })
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, StoreError> {
        let mut b = [0u8; 1];
        self.exact(&mut b, what)?;
        Ok(b[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, StoreError> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, StoreError> {
        let mut b = [0u8; 8];
        self.exact(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f32(&mut self, what: &'static str) -> Result<f32, StoreError> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(f32::from_le_bytes(b))
    }

    fn str(&mut self, what: &'static str) -> Result<String, StoreError> {
        let len = self.u32(what)? as usize;
        let mut bytes = vec![0u8; len];
        self.exact(&mut bytes, what)?;
        String::from_utf8(bytes).map_err(|_| StoreError::Utf8(what))
    }
}

pub fn load_index(path: &Path) -> Result<VectorIndex, StoreError> {
    let file = std::fs::File::open(path)?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };

    let mut magic = [0u8; 8];
    r.exact(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(StoreError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != INDEX_FORMAT_VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    let role = role_from_byte(r.u8("role")?)?;
    let dim = r.u32("dim")? as usize;
    let n_chunks = r.u64("chunk count")? as usize;
    let n_entries = r.u64("entry count")? as usize;

    let mut chunk_store = BTreeMap::new();
    for _ in 0..n_chunks {
        let chunk_id = r.str("chunk id")?;
        let doc_id = r.str("doc id")?;
        let text = r.str("chunk text")?;
        let start = r.u64("chunk start")? as usize;
        let end = r.u64("chunk end")? as usize;
        if chunk_store
            .insert(
                chunk_id.clone(),
                Chunk {
                    chunk_id: chunk_id.clone(),
                    doc_id,
                    text,
                    start,
                    end,
                },
            )
            .is_some()
        {
            return Err(StoreError::Inconsistent(format!(
                "duplicate chunk id {chunk_id}"
            )));
        }
    }

    let mut entries = Vec::with_capacity(n_entries);
    for _ in 0..n_entries {
        let chunk_id = r.str("entry id")?;
        if !chunk_store.contains_key(&chunk_id) {
            return Err(StoreError::Inconsistent(format!(
                "entry {chunk_id} has no chunk record"
            )));
        }
        let vec_len = r.u32("vector length")? as usize;
        if vec_len != dim {
            return Err(StoreError::DimMismatch {
                expected: dim,
                got: vec_len,
            });
        }
        let mut values = Vec::with_capacity(vec_len);
        for _ in 0..vec_len {
            values.push(r.f32("vector value")?);
        }
        let vector = EmbeddingVector::new(values)
            .map_err(|e| StoreError::Inconsistent(format!("entry {chunk_id}: {e}")))?;
        entries.push((chunk_id, vector));
    }
    if entries.len() != chunk_store.len() {
        return Err(StoreError::Inconsistent(format!(
            "{} entries vs {} chunks",
            entries.len(),
            chunk_store.len()
        )));
    }

    Ok(VectorIndex::from_parts(role, dim, entries, chunk_store))
}
