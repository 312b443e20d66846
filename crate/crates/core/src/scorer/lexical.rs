use std::collections::{BTreeMap, HashMap};

use super::{CallCounter, PairScorer};
use crate::corpus::{CharacterRecord, Corpus};
use crate::error::Result;
use crate::vectorspace::tokenize;

/// Per-term weights for the lexical scorer.
#[derive(Debug, Clone, PartialEq)]
pub enum IdfTable {
    /// Every term weighs 1.
    Uniform,
    /// `ln(1 + n / df)`; unseen terms take `df = 1`.
    Fitted { n_docs: usize, df: HashMap<String, usize> },
}

impl IdfTable {
    pub fn fit(corpus: &Corpus) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        for record in corpus.records() {
            let bag = TokenBag::new(&record.description);
            for term in bag.0.keys() {
                *df.entry(term.clone()).or_default() += 1;
            }
        }
        IdfTable::Fitted {
            n_docs: corpus.len(),
            df,
        }
    }

    pub fn weight(&self, term: &str) -> f64 {
        match self {
            IdfTable::Uniform => 1.0,
            IdfTable::Fitted { n_docs, df } => {
                let d = df.get(term).copied().unwrap_or(0).max(1);
                (1.0 + *n_docs as f64 / d as f64).ln()
            }
        }
    }
}

/// Lowercased token multiset, ordered by term.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenBag(BTreeMap<String, u32>);

impl TokenBag {
    pub fn new(text: &str) -> Self {
        let mut bag = BTreeMap::new();
        for t in tokenize(text) {
            *bag.entry(t).or_insert(0) += 1;
        }
        TokenBag(bag)
    }

    fn mass(&self, idf: &IdfTable) -> f64 {
        self.0.iter().map(|(t, &tf)| idf.weight(t) * tf as f64).sum()
    }
}

fn dice(a: &TokenBag, mass_a: f64, b: &TokenBag, mass_b: f64, idf: &IdfTable) -> f64 {
    let denom = mass_a + mass_b;
    if denom == 0.0 {
        return 0.0;
    }
    // both maps iterate in term order, so the sum is the same for (a, b) and (b, a)
    let shared: f64 = a
        .0
        .iter()
        .filter_map(|(t, &tf_a)| b.0.get(t).map(|&tf_b| idf.weight(t) * tf_a.min(tf_b) as f64))
        .sum();
    (2.0 * shared / denom).clamp(0.0, 1.0)
}

/// IDF-weighted Dice coefficient over lowercased token multisets.
pub fn lexical_cross_score(text_a: &str, text_b: &str, idf: &IdfTable) -> f64 {
    let (a, b) = (TokenBag::new(text_a), TokenBag::new(text_b));
    dice(&a, a.mass(idf), &b, b.mass(idf), idf)
}

/// In-process cross-scorer over token overlap.
#[derive(Debug)]
pub struct LexicalScorer {
    idf: IdfTable,
    // keyed by record id
    cache: HashMap<String, (TokenBag, f64)>,
    calls: CallCounter,
}

impl LexicalScorer {
    pub fn new(idf: IdfTable) -> Self {
        LexicalScorer {
            idf,
            cache: HashMap::new(),
            calls: CallCounter::default(),
        }
    }

    /// Pre-tokenizes every record of `corpus`. Later calls look records up by
    /// id, so only score records from this corpus.
    pub fn with_cache(mut self, corpus: &Corpus) -> Self {
        for r in corpus.records() {
            let bag = TokenBag::new(&r.description);
            let mass = bag.mass(&self.idf);
            self.cache.insert(r.id.clone(), (bag, mass));
        }
        self
    }

    pub fn idf(&self) -> &IdfTable {
        &self.idf
    }
}

impl PairScorer for LexicalScorer {
    fn name(&self) -> &str {
        "lexical"
    }

    fn score(&self, query: &CharacterRecord, candidate: &CharacterRecord) -> Result<f64> {
        self.calls.bump();
        let score = match (self.cache.get(&query.id), self.cache.get(&candidate.id)) {
            (Some((a, ma)), Some((b, mb))) => dice(a, *ma, b, *mb, &self.idf),
            _ => lexical_cross_score(&query.description, &candidate.description, &self.idf),
        };
        Ok(score)
    }

    fn calls(&self) -> u64 {
        self.calls.get()
    }
}
