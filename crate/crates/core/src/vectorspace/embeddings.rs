use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::embedder::Embedder;
use crate::corpus::Corpus;
use crate::error::{Error, Result};

const BINARY_MAGIC: &[u8; 4] = b"EMB1";

/// A non-empty vector of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("vector must have dimension > 0".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite vector value {v}")));
        }
        Ok(Vector(values))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    /// One `{"id": ..., "vector": [...]}` object per line.
    Text,
    /// `EMB1` magic, u32 dimension, then (u16 id length, id bytes, f32 × d)
    /// per record, all little-endian.
    Binary,
}

impl EmbeddingFormat {
    /// Binary when the file name ends in `.bin`, text otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => EmbeddingFormat::Binary,
            _ => EmbeddingFormat::Text,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TextLine {
    id: String,
    vector: Vec<f64>,
}

/// Immutable id → vector table with norms computed once at construction.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    dimension: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    norms: Vec<f64>,
}

impl EmbeddingSet {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be > 0".into()));
        }
        Ok(EmbeddingSet {
            dimension,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
            norms: Vec::new(),
        })
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vector) -> Result<()> {
        let id = id.into();
        if vector.dimension() != self.dimension {
            return Err(Error::DimensionMismatch {
                id,
                expected: self.dimension,
                found: vector.dimension(),
            });
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        let values = vector.into_values();
        self.norms.push(values.iter().map(|v| v * v).sum::<f64>().sqrt());
        self.data.extend_from_slice(&values);
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
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

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.position(id).map(|p| self.row(p))
    }

    pub fn row(&self, pos: usize) -> &[f64] {
        &self.data[pos * self.dimension..(pos + 1) * self.dimension]
    }

    pub fn norm(&self, pos: usize) -> f64 {
        self.norms[pos]
    }

    /// Number of stored vectors with zero norm; their cosine with anything is 0.
    pub fn zero_norm_count(&self) -> usize {
        self.norms.iter().filter(|&&n| n == 0.0).count()
    }

    /// Corpus ids absent from this set, in record order.
    pub fn missing_ids(&self, corpus: &Corpus) -> Vec<String> {
        corpus
            .records()
            .iter()
            .filter(|r| !self.index.contains_key(&r.id))
            .map(|r| r.id.clone())
            .collect()
    }

    pub fn check_coverage(&self, corpus: &Corpus) -> Result<()> {
        let missing = self.missing_ids(corpus);
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::CoverageGap(missing))
        }
    }

    pub fn write(&self, path: impl AsRef<Path>, format: EmbeddingFormat) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        match format {
            EmbeddingFormat::Text => {
                for (pos, id) in self.ids.iter().enumerate() {
                    serde_json::to_writer(
                        &mut out,
                        &TextLine {
                            id: id.clone(),
                            vector: self.row(pos).to_vec(),
                        },
                    )?;
                    out.write_all(b"\n").map_err(io)?;
                }
            }
            EmbeddingFormat::Binary => {
                out.write_all(BINARY_MAGIC).map_err(io)?;
                out.write_all(&(self.dimension as u32).to_le_bytes()).map_err(io)?;
                for (pos, id) in self.ids.iter().enumerate() {
                    let len = u16::try_from(id.len()).map_err(|_| {
                        Error::InvalidArgument(format!("id `{id}` is longer than 65535 bytes"))
                    })?;
                    out.write_all(&len.to_le_bytes()).map_err(io)?;
                    out.write_all(id.as_bytes()).map_err(io)?;
                    for &v in self.row(pos) {
                        out.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
                    }
                }
            }
        }
        out.flush().map_err(io)
    }

    pub fn read_text(reader: impl BufRead) -> Result<Self> {
        let mut set: Option<EmbeddingSet> = None;
        for (i, line) in reader.lines().enumerate() {
            let parse = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            let line = line.map_err(|e| parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let TextLine { id, vector } =
                serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
            let vector = Vector::new(vector).map_err(|e| parse(format!("`{id}`: {e}")))?;
            let set = match &mut set {
                Some(s) => s,
                None => set.insert(EmbeddingSet::new(vector.dimension())?),
            };
            set.insert(id, vector)?;
        }
        set.ok_or_else(|| Error::InvalidArgument("embedding file holds no vectors".into()))
    }

    pub fn read_binary(mut reader: impl Read) -> Result<Self> {
        let short = |what: &str| Error::InvalidArgument(format!("truncated embedding file: {what}"));
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic).map_err(|_| short("magic"))?;
        if &magic != BINARY_MAGIC {
            return Err(Error::InvalidArgument("bad embedding file magic".into()));
        }
        let mut word = [0u8; 4];
        reader.read_exact(&mut word).map_err(|_| short("dimension"))?;
        let dimension = u32::from_le_bytes(word) as usize;
        let mut set = EmbeddingSet::new(dimension)?;
        let mut len = [0u8; 2];
        let mut values = vec![0u8; dimension * 4];
        loop {
            match reader.read(&mut len[..1]) {
                Ok(0) => break,
                Ok(_) => reader.read_exact(&mut len[1..]).map_err(|_| short("id length"))?,
                Err(e) => return Err(Error::InvalidArgument(e.to_string())),
            }
            let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
            reader.read_exact(&mut id).map_err(|_| short("id"))?;
            let id = String::from_utf8(id)
                .map_err(|_| Error::InvalidArgument("embedding id is not UTF-8".into()))?;
            reader.read_exact(&mut values).map_err(|_| short(&id))?;
            let vector = values
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            set.insert(id, Vector::new(vector)?)?;
        }
        Ok(set)
    }
}

/// Loads either embedding form, picking binary by the `.bin` extension.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match EmbeddingFormat::from_path(path) {
        EmbeddingFormat::Text => EmbeddingSet::read_text(BufReader::new(file)),
        EmbeddingFormat::Binary => EmbeddingSet::read_binary(BufReader::new(file)),
    }
}

pub fn embed_all(embedder: &Embedder, corpus: &Corpus) -> EmbeddingSet {
    let vectors: Vec<Vector> = corpus
        .records()
        .par_iter()
        .map(|r| embedder.embed(&r.description))
        .collect();
    let mut set = EmbeddingSet::new(embedder.dimension()).expect("embedder dimension > 0");
    for (record, vector) in corpus.records().iter().zip(vectors) {
        set.insert(record.id.clone(), vector)
            .expect("corpus ids are unique and dimensions agree");
    }
    set
}
