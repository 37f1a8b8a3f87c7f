use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::CorpusError;
use crate::tensor::cosine;

const MAGIC: &[u8; 4] = b"RDKE";

/// Unit-norm vectors keyed by image (`img:<id>`) or caption (`txt:<id>:<i>`) keys.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    keys: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, ..Default::default() }
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

    /// Normalizes `vector` to unit L2 and stores it, replacing any previous value.
    pub fn insert(&mut self, key: &str, vector: &[f64]) -> Result<(), CorpusError> {
        if vector.len() != self.dim {
            return Err(CorpusError::Format(format!(
                "embedding {key:?} has dim {} but the table has dim {}",
                vector.len(),
                self.dim
            )));
        }
        if key.len() > u16::MAX as usize {
            return Err(CorpusError::Format(format!("key of {} bytes is too long", key.len())));
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(CorpusError::Format(format!("embedding {key:?} is not finite")));
        }
        if norm == 0.0 {
            return Err(CorpusError::ZeroEmbedding(key.to_string()));
        }
        let unit: Vec<f64> = vector.iter().map(|v| v / norm).collect();
        match self.index.get(key) {
            Some(&i) => self.vectors[i] = unit,
            None => {
                self.index.insert(key.to_string(), self.keys.len());
                self.keys.push(key.to_string());
                self.vectors.push(unit);
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.index.get(key).map(|&i| self.vectors[i].as_slice())
    }

    pub fn require(&self, key: &str) -> Result<&[f64], CorpusError> {
        self.get(key).ok_or_else(|| CorpusError::Format(format!("missing embedding key {key:?}")))
    }

    pub fn cosine(&self, a: &str, b: &str) -> Result<f64, CorpusError> {
        Ok(cosine(self.require(a)?, self.require(b)?))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.keys.iter().map(String::as_str).zip(self.vectors.iter().map(Vec::as_slice))
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, CorpusError> {
        let mut header = [0u8; 12];
        read_exact(&mut r, &mut header, "header")?;
        if &header[..4] != MAGIC {
            return Err(CorpusError::Format("bad magic, expected RDKE".into()));
        }
        let count = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let mut table = Self::new(dim);
        let mut payload = vec![0u8; dim * 4];
        for entry in 0..count {
            let mut len = [0u8; 2];
            read_exact(&mut r, &mut len, &format!("entry {entry} key length"))?;
            let mut key = vec![0u8; u16::from_le_bytes(len) as usize];
            read_exact(&mut r, &mut key, &format!("entry {entry} key"))?;
            let key =
                String::from_utf8(key).map_err(|_| CorpusError::Format(format!("entry {entry}: key is not UTF-8")))?;
            read_exact(&mut r, &mut payload, &format!("entry {entry} vector"))?;
            let v: Vec<f64> =
                payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
            if table.index.contains_key(&key) {
                return Err(CorpusError::Format(format!("duplicate embedding key {key:?}")));
            }
            table.insert(&key, &v)?;
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(CorpusError::Format(format!("trailing bytes after {count} entries")));
        }
        Ok(table)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), CorpusError> {
        let count = u32::try_from(self.len()).map_err(|_| CorpusError::Format("too many entries".into()))?;
        w.write_all(MAGIC)?;
        w.write_all(&count.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for (key, v) in self.iter() {
            w.write_all(&(key.len() as u16).to_le_bytes())?;
            w.write_all(key.as_bytes())?;
            for &x in v {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::read(BufReader::new(File::open(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        self.write(BufWriter::new(File::create(path)?))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), CorpusError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => CorpusError::Truncated(format!("{what} expected {} bytes", buf.len())),
        _ => CorpusError::Io(e),
    })
}

/// Loads a binary embedding table and renormalizes every vector.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable, CorpusError> {
    EmbeddingTable::load(path)
}
