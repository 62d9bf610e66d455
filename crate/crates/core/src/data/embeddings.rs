use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::schema::ConceptEmbeddings;

pub const MAGIC: &[u8; 8] = b"BICOEMB1";

/// Keyed matrices of a common width, as read from or written to the binary
/// embedding format. Insertion order is kept for writing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    keys: Vec<String>,
    map: HashMap<String, Matrix>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            keys: Vec::new(),
            map: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    pub fn insert(&mut self, key: impl Into<String>, m: Matrix) -> Result<()> {
        let key = key.into();
        if m.cols() != self.dim {
            return Err(Error::Embedding(format!(
                "{key}: width {} but the store holds dim {}",
                m.cols(),
                self.dim
            )));
        }
        if m.rows() == 0 {
            return Err(Error::Embedding(format!("{key}: zero rows")));
        }
        if m.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::Embedding(format!("{key}: non-finite value")));
        }
        if self.map.contains_key(&key) {
            return Err(Error::Embedding(format!("duplicate key {key:?}")));
        }
        self.keys.push(key.clone());
        self.map.insert(key, m);
        Ok(())
    }

    pub fn insert_vector(&mut self, key: impl Into<String>, v: Vec<f64>) -> Result<()> {
        self.insert(key, Matrix::row_vector(v))
    }

    pub fn get(&self, key: &str) -> Option<&Matrix> {
        self.map.get(key)
    }

    pub fn matrix(&self, key: &str) -> Result<&Matrix> {
        self.get(key)
            .ok_or_else(|| Error::Embedding(format!("missing embedding key {key:?}")))
    }

    /// A single-row entry as a vector.
    pub fn vector(&self, key: &str) -> Result<&[f64]> {
        let m = self.matrix(key)?;
        if m.rows() != 1 {
            return Err(Error::Embedding(format!(
                "{key:?} has {} rows, expected 1",
                m.rows()
            )));
        }
        Ok(m.row(0))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&u32_of(self.keys.len(), "record count")?.to_le_bytes());
        out.extend_from_slice(&u32_of(self.dim, "dim")?.to_le_bytes());
        for key in &self.keys {
            let m = &self.map[key];
            out.extend_from_slice(&u32_of(key.len(), "key length")?.to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            out.extend_from_slice(&u32_of(m.rows(), "row count")?.to_le_bytes());
            for &x in m.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Embedding("bad magic, not an embedding file".into()));
        }
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        if dim == 0 && count > 0 {
            return Err(Error::Embedding("dim is zero".into()));
        }
        let mut store = Self::new(dim);
        for _ in 0..count {
            let klen = r.u32()? as usize;
            let key = std::str::from_utf8(r.take(klen)?)
                .map_err(|_| Error::Embedding("key is not UTF-8".into()))?
                .to_string();
            let rows = r.u32()? as usize;
            let n = rows
                .checked_mul(dim)
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Embedding(format!("{key}: size overflow")))?;
            let data = r
                .take(n)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            store.insert(key, Matrix::new(rows, dim, data)?)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Embedding(format!(
                "{} trailing bytes after the last record",
                bytes.len() - r.pos
            )));
        }
        Ok(store)
    }
}

impl ConceptEmbeddings for EmbeddingStore {
    fn concept(&self, key: &str) -> Option<&[f64]> {
        self.get(key).filter(|m| m.rows() == 1).map(|m| m.row(0))
    }
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Embedding(format!("{what} {n} does not fit in u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Embedding(format!("truncated file at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingStore::from_bytes(&bytes)
        .map_err(|e| Error::Embedding(format!("{}: {e}", path.display())))
}

pub fn write_embeddings(path: impl AsRef<Path>, store: &EmbeddingStore) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, store.to_bytes()?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingStore {
        let mut s = EmbeddingStore::new(2);
        s.insert("t1", Matrix::new(3, 2, vec![0.5, -1.0, 2.0, 0.25, 0.0, 8.0]).unwrap())
            .unwrap();
        s.insert_vector("t1@EP", vec![1.0, -0.5]).unwrap();
        s.insert_vector("EP:L", vec![0.125, 3.0]).unwrap();
        s
    }

    #[test]
    fn round_trip_is_exact_for_f32_values() {
        let s = sample();
        let back = EmbeddingStore::from_bytes(&s.to_bytes().unwrap()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.keys(), ["t1", "t1@EP", "EP:L"]);
        assert_eq!(back.concept("EP:L"), Some(&[0.125, 3.0][..]));
        assert_eq!(back.concept("t1"), None);
    }

    #[test]
    fn byte_layout() {
        let mut s = EmbeddingStore::new(1);
        s.insert_vector("ab", vec![1.0]).unwrap();
        let b = s.to_bytes().unwrap();
        let mut want = b"BICOEMB1".to_vec();
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(b"ab");
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(b, want);
    }

    #[test]
    fn bad_magic_truncation_and_duplicates() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(EmbeddingStore::from_bytes(&bad).unwrap_err().to_string().contains("magic"));
        let err = EmbeddingStore::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");

        let mut s = EmbeddingStore::new(1);
        s.insert_vector("k", vec![1.0]).unwrap();
        assert!(s.insert_vector("k", vec![2.0]).is_err());
        let mut dup = s.to_bytes().unwrap();
        dup[8] = 2;
        dup.extend_from_within(16..16 + 4 + 1 + 4 + 4);
        assert!(EmbeddingStore::from_bytes(&dup).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn width_mismatch_and_missing_key() {
        let mut s = EmbeddingStore::new(2);
        assert!(s.insert_vector("x", vec![1.0]).is_err());
        assert!(s.vector("nope").is_err());
        let s = sample();
        assert!(s.vector("t1").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        write_embeddings(&p, &sample()).unwrap();
        assert_eq!(read_embeddings(&p).unwrap(), sample());
    }
}
