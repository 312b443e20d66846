use std::collections::{BTreeMap, BTreeSet};
use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::embeddings::Vector;
use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Lowercased alphanumeric runs. Every non-alphanumeric character separates.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Term → dense column index. Terms are numbered in lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    terms: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn fit(corpus: &Corpus) -> Self {
        let all: BTreeSet<String> = corpus
            .records()
            .iter()
            .flat_map(|r| tokenize(&r.description))
            .collect();
        Vocabulary {
            terms: all.into_iter().enumerate().map(|(i, t)| (t, i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index(&self, term: &str) -> Option<usize> {
        self.terms.get(term).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Bow,
    Tfidf,
    Hashed,
}

impl std::str::FromStr for EmbedderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bow" => Ok(EmbedderKind::Bow),
            "tfidf" => Ok(EmbedderKind::Tfidf),
            "hashed" => Ok(EmbedderKind::Hashed),
            other => Err(Error::InvalidArgument(format!("unknown embedder `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedderParams {
    /// Output dimension of the hashed embedder.
    pub hashed_dim: i64,
}

impl Default for EmbedderParams {
    fn default() -> Self {
        EmbedderParams { hashed_dim: 256 }
    }
}

/// A fitted text → vector map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Embedder {
    /// Raw term counts over the fitted vocabulary.
    Bow { vocabulary: Vocabulary },
    /// Term counts weighted by `ln(n / df)`.
    Tfidf { vocabulary: Vocabulary, idf: Vec<f64> },
    /// Signed feature hashing into `dim` buckets.
    Hashed { dim: usize },
}

pub fn fit_embedder(kind: EmbedderKind, corpus: &Corpus, params: &EmbedderParams) -> Result<Embedder> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("cannot fit an embedder on an empty corpus".into()));
    }
    match kind {
        EmbedderKind::Bow => Ok(Embedder::Bow {
            vocabulary: Vocabulary::fit(corpus),
        }),
        EmbedderKind::Tfidf => {
            let vocabulary = Vocabulary::fit(corpus);
            let mut df = vec![0usize; vocabulary.len()];
            for record in corpus.records() {
                let seen: BTreeSet<usize> = tokenize(&record.description)
                    .filter_map(|t| vocabulary.index(&t))
                    .collect();
                for col in seen {
                    df[col] += 1;
                }
            }
            let n = corpus.len() as f64;
            let idf = df.iter().map(|&d| (n / d as f64).ln()).collect();
            Ok(Embedder::Tfidf { vocabulary, idf })
        }
        EmbedderKind::Hashed => {
            if params.hashed_dim <= 0 {
                return Err(Error::InvalidArgument(format!(
                    "hashed dimension must be positive, got {}",
                    params.hashed_dim
                )));
            }
            Ok(Embedder::Hashed {
                dim: params.hashed_dim as usize,
            })
        }
    }
}

fn token_hash(token: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    h.finish()
}

impl Embedder {
    pub fn kind(&self) -> EmbedderKind {
        match self {
            Embedder::Bow { .. } => EmbedderKind::Bow,
            Embedder::Tfidf { .. } => EmbedderKind::Tfidf,
            Embedder::Hashed { .. } => EmbedderKind::Hashed,
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            Embedder::Bow { vocabulary } | Embedder::Tfidf { vocabulary, .. } => vocabulary.len().max(1),
            Embedder::Hashed { dim } => *dim,
        }
    }

    /// Out-of-vocabulary tokens are ignored, so the result may be all zero.
    pub fn embed(&self, text: &str) -> Vector {
        let mut values = vec![0.0; self.dimension()];
        match self {
            Embedder::Bow { vocabulary } => {
                for t in tokenize(text) {
                    if let Some(col) = vocabulary.index(&t) {
                        values[col] += 1.0;
                    }
                }
            }
            Embedder::Tfidf { vocabulary, idf } => {
                for t in tokenize(text) {
                    if let Some(col) = vocabulary.index(&t) {
                        values[col] += idf[col];
                    }
                }
            }
            Embedder::Hashed { dim } => {
                for t in tokenize(text) {
                    let h = token_hash(&t);
                    let col = (h % *dim as u64) as usize;
                    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                    values[col] += sign;
                }
            }
        }
        Vector::new(values).expect("embedder output is finite and non-empty")
    }
}
