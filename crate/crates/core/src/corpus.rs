//! Theme-labeled corpus: ingestion, filtering, splitting, pair generation and
//! descriptive statistics.
//!
//! A corpus file holds one JSON object per line:
//! `{"id": ..., "name": ..., "trope": ..., "description": ...}`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum description length used by default: records must have strictly
/// more words than this.
pub const DEFAULT_MIN_WORDS: usize = 100;
pub const DEFAULT_EVAL_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterRecord {
    pub id: String,
    pub name: String,
    pub trope: String,
    pub description: String,
}

/// An immutable, ordered collection of records with a trope → members index.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    records: Vec<CharacterRecord>,
    by_id: HashMap<String, usize>,
    // member positions are kept in record order
    trope_index: BTreeMap<String, Vec<usize>>,
}

impl Corpus {
    /// Builds a corpus from records, rejecting duplicate ids and empty
    /// descriptions. No filtering is applied.
    pub fn from_records(records: Vec<CharacterRecord>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(records.len());
        let mut trope_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (pos, record) in records.iter().enumerate() {
            if record.description.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "record `{}` has an empty description",
                    record.id
                )));
            }
            if by_id.insert(record.id.clone(), pos).is_some() {
                return Err(Error::DuplicateId(record.id.clone()));
            }
            trope_index.entry(record.trope.clone()).or_default().push(pos);
        }
        Ok(Corpus {
            records,
            by_id,
            trope_index,
        })
    }

    /// Reads a corpus file without any filtering.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        Self::from_records(read_records(reader)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for record in &self.records {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[CharacterRecord] {
        &self.records
    }

    pub fn record(&self, pos: usize) -> &CharacterRecord {
        &self.records[pos]
    }

    pub fn get(&self, id: &str) -> Option<&CharacterRecord> {
        self.by_id.get(id).map(|&pos| &self.records[pos])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn n_tropes(&self) -> usize {
        self.trope_index.len()
    }

    /// Tropes in lexicographic order with member ids in record order.
    pub fn tropes(&self) -> impl Iterator<Item = (&str, Vec<&str>)> {
        self.trope_index.iter().map(move |(trope, members)| {
            (
                trope.as_str(),
                members
                    .iter()
                    .map(|&p| self.records[p].id.as_str())
                    .collect(),
            )
        })
    }

    pub fn trope_members(&self, trope: &str) -> Option<&[usize]> {
        self.trope_index.get(trope).map(Vec::as_slice)
    }

    /// Positions of all members that share `pos`'s trope, excluding `pos`.
    pub fn partners_of(&self, pos: usize) -> impl Iterator<Item = usize> + '_ {
        self.trope_index[&self.records[pos].trope]
            .iter()
            .copied()
            .filter(move |&p| p != pos)
    }

    fn subset(&self, keep: &[bool]) -> Corpus {
        let records = self
            .records
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(r, _)| r.clone())
            .collect();
        Corpus::from_records(records).expect("subset of a valid corpus is valid")
    }
}

fn read_records(reader: impl BufRead) -> Result<Vec<CharacterRecord>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CharacterRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if record.description.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("record `{}` has an empty description", record.id),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Number of maximal whitespace-delimited tokens.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Reads a corpus file and applies the two ingestion filters in order: keep
/// records with more than `min_words` words, then drop tropes left with fewer
/// than two members.
pub fn ingest(path: impl AsRef<Path>, min_words: usize) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(BufReader::new(file), min_words)
}

pub fn ingest_reader(reader: impl BufRead, min_words: usize) -> Result<Corpus> {
    let records = read_records(reader)?;
    // duplicate ids are rejected across the whole file, before filtering
    {
        let mut seen = std::collections::HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
    }

    let long_enough: Vec<CharacterRecord> = records
        .into_iter()
        .filter(|r| word_count(&r.description) > min_words)
        .collect();
    let mut trope_sizes: HashMap<&str, usize> = HashMap::new();
    for r in &long_enough {
        *trope_sizes.entry(r.trope.as_str()).or_default() += 1;
    }
    let keep: Vec<bool> = long_enough
        .iter()
        .map(|r| trope_sizes[r.trope.as_str()] >= 2)
        .collect();
    let kept = long_enough
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(r, _)| r.clone())
        .collect();
    Corpus::from_records(kept)
}

/// Size of the evaluation side for a corpus of `n` records.
pub fn eval_size(n: usize, eval_fraction: f64) -> usize {
    // the epsilon absorbs representation error such as 0.2 * 136250
    ((n as f64) * eval_fraction + 1e-9).floor() as usize
}

/// Record-level uniform random split into (train, eval). Tropes are not
/// re-filtered, so singletons may appear on either side.
pub fn split(corpus: &Corpus, eval_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "eval fraction must lie in (0, 1), got {eval_fraction}"
        )));
    }
    if corpus.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot split a corpus of {} record(s)",
            corpus.len()
        )));
    }
    let n_eval = eval_size(corpus.len(), eval_fraction);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_eval = vec![false; corpus.len()];
    for &pos in &order[..n_eval] {
        in_eval[pos] = true;
    }
    let in_train: Vec<bool> = in_eval.iter().map(|e| !e).collect();
    Ok((corpus.subset(&in_train), corpus.subset(&in_eval)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairLabel {
    IsSimilar,
    NotSimilar,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    #[serde(rename = "a")]
    pub a_id: String,
    #[serde(rename = "b")]
    pub b_id: String,
    pub label: PairLabel,
}

/// Lazily emits every unordered same-trope pair, each optionally followed by
/// one sampled cross-trope negative anchored on the pair's first item.
pub struct PairStream<'a> {
    corpus: &'a Corpus,
    tropes: Vec<&'a [usize]>,
    trope: usize,
    i: usize,
    j: usize,
    pending_negative: Option<usize>,
    rng: Option<ChaCha8Rng>,
}

impl<'a> PairStream<'a> {
    fn sample_negative(&mut self, anchor: usize) -> usize {
        let corpus = self.corpus;
        let rng = self.rng.as_mut().expect("negatives enabled");
        let trope = &corpus.records[anchor].trope;
        loop {
            let pos = rng.random_range(0..corpus.len());
            if &corpus.records[pos].trope != trope {
                return pos;
            }
        }
    }

    fn pair(&self, a: usize, b: usize, label: PairLabel) -> PairExample {
        PairExample {
            a_id: self.corpus.records[a].id.clone(),
            b_id: self.corpus.records[b].id.clone(),
            label,
        }
    }
}

impl Iterator for PairStream<'_> {
    type Item = PairExample;

    fn next(&mut self) -> Option<PairExample> {
        if let Some(anchor) = self.pending_negative.take() {
            let other = self.sample_negative(anchor);
            return Some(self.pair(anchor, other, PairLabel::NotSimilar));
        }
        while self.trope < self.tropes.len() {
            let members = self.tropes[self.trope];
            if self.j >= members.len() {
                self.i += 1;
                self.j = self.i + 1;
            }
            if self.i + 1 >= members.len() {
                self.trope += 1;
                self.i = 0;
                self.j = 1;
                continue;
            }
            let (a, b) = (members[self.i], members[self.j]);
            self.j += 1;
            if self.rng.is_some() {
                self.pending_negative = Some(a);
            }
            return Some(self.pair(a, b, PairLabel::IsSimilar));
        }
        None
    }
}

/// Pair generation over `corpus`. Tropes are visited in lexicographic order,
/// members in record order. With `with_negatives`, each positive is followed
/// by one negative; negatives are sampled independently and may repeat.
pub fn generate_pairs(corpus: &Corpus, with_negatives: bool, seed: u64) -> Result<PairStream<'_>> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("cannot pair an empty corpus".into()));
    }
    if with_negatives && corpus.n_tropes() < 2 {
        return Err(Error::InvalidArgument(
            "negative pairs need at least two tropes".into(),
        ));
    }
    Ok(PairStream {
        corpus,
        tropes: corpus.trope_index.values().map(Vec::as_slice).collect(),
        trope: 0,
        i: 0,
        j: 1,
        pending_negative: None,
        rng: with_negatives.then(|| ChaCha8Rng::seed_from_u64(seed)),
    })
}

pub fn write_pairs(
    pairs: impl IntoIterator<Item = PairExample>,
    path: impl AsRef<Path>,
) -> Result<u64> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut n = 0;
    for pair in pairs {
        serde_json::to_writer(&mut out, &pair)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        n += 1;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(n)
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PairExample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: PairExample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation; zero for empty input.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let values: Vec<f64> = values.into_iter().collect();
        if values.is_empty() {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_characters: usize,
    pub words_per_character: MeanStd,
    pub n_tropes: usize,
    pub characters_per_trope: MeanStd,
    pub n_is_similar_pairs: u64,
    /// Negatives that pair generation with negatives would add (one per
    /// positive when the corpus has at least two tropes).
    pub n_not_similar_pairs: u64,
}

pub fn stats(corpus: &Corpus) -> CorpusStats {
    let n_is_similar_pairs: u64 = corpus
        .trope_index
        .values()
        .map(|m| choose2(m.len() as u64))
        .sum();
    CorpusStats {
        n_characters: corpus.len(),
        words_per_character: MeanStd::of(
            corpus.records.iter().map(|r| word_count(&r.description) as f64),
        ),
        n_tropes: corpus.n_tropes(),
        characters_per_trope: MeanStd::of(corpus.trope_index.values().map(|m| m.len() as f64)),
        n_is_similar_pairs,
        n_not_similar_pairs: if corpus.n_tropes() >= 2 {
            n_is_similar_pairs
        } else {
            0
        },
    }
}

pub(crate) fn choose2(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

impl CorpusStats {
    /// Two-column human-readable table.
    pub fn table(&self) -> String {
        let pairs_total = self.n_is_similar_pairs + self.n_not_similar_pairs;
        let share = if pairs_total == 0 {
            0.0
        } else {
            100.0 * self.n_is_similar_pairs as f64 / pairs_total as f64
        };
        let rows = [
            ("Characters", self.n_characters.to_string()),
            (
                "Words per character",
                format!(
                    "{:.2} (sd = {:.2})",
                    self.words_per_character.mean, self.words_per_character.std
                ),
            ),
            ("Tropes", self.n_tropes.to_string()),
            (
                "Characters per trope",
                format!(
                    "{:.2} (sd = {:.2})",
                    self.characters_per_trope.mean, self.characters_per_trope.std
                ),
            ),
            ("IsSimilar pairs", self.n_is_similar_pairs.to_string()),
            (
                "Character-pairs with negatives",
                format!("{pairs_total} ({share:.0}% IsSimilar)"),
            ),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter()
            .map(|(k, v)| format!("{k:<width$}  {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize) -> String {
        vec!["word"; n].join(" ")
    }

    fn rec(id: &str, trope: &str, n_words: usize) -> CharacterRecord {
        CharacterRecord {
            id: id.into(),
            name: id.to_uppercase(),
            trope: trope.into(),
            description: words(n_words),
        }
    }

    fn jsonl(records: &[CharacterRecord]) -> String {
        records
            .iter()
            .map(|r| serde_json::to_string(r).unwrap() + "\n")
            .collect()
    }

    #[test]
    fn word_count_examples() {
        assert_eq!(word_count(""), 0);
        assert_eq!(word_count("a  b\tc"), 3);
        assert_eq!(word_count("Loki's constant scheming"), 3);
    }

    #[test]
    fn ingest_keeps_long_records() {
        let text = jsonl(&[rec("a", "t", 150), rec("b", "t", 150), rec("c", "t", 150)]);
        let corpus = ingest_reader(text.as_bytes(), 100).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.n_tropes(), 1);
    }

    #[test]
    fn ingest_threshold_is_strict() {
        let text = jsonl(&[rec("a", "t", 100), rec("b", "t", 101), rec("c", "t", 101)]);
        let corpus = ingest_reader(text.as_bytes(), 100).unwrap();
        let ids: Vec<_> = corpus.records().iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["b", "c"]);
    }

    #[test]
    fn ingest_drops_trope_shrunk_to_singleton() {
        let text = jsonl(&[
            rec("a", "small", 150),
            rec("b", "small", 50),
            rec("c", "big", 150),
            rec("d", "big", 150),
        ]);
        let corpus = ingest_reader(text.as_bytes(), 100).unwrap();
        assert!(corpus.get("a").is_none());
        assert!(corpus.get("b").is_none());
        assert_eq!(corpus.n_tropes(), 1);
        assert_eq!(corpus.len(), 2);
    }

    #[test]
    fn ingest_reports_line_and_duplicate() {
        let mut text = jsonl(&[rec("a", "t", 150)]);
        text.push_str("{not json}\n");
        match ingest_reader(text.as_bytes(), 100) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let dup = jsonl(&[rec("a", "t", 150), rec("a", "u", 150)]);
        match ingest_reader(dup.as_bytes(), 100) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "a"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ingest_preserves_file_order() {
        let text = jsonl(&[rec("z", "t", 150), rec("m", "u", 150), rec("a", "t", 150), rec("b", "u", 150)]);
        let corpus = ingest_reader(text.as_bytes(), 100).unwrap();
        let ids: Vec<_> = corpus.records().iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["z", "m", "a", "b"]);
    }

    fn corpus_of(n: usize) -> Corpus {
        Corpus::from_records((0..n).map(|i| rec(&format!("r{i:03}"), &format!("t{}", i % 3), 5)).collect())
            .unwrap()
    }

    #[test]
    fn split_counts_and_partition() {
        let corpus = corpus_of(10);
        let (train, eval) = split(&corpus, 0.2, 7).unwrap();
        assert_eq!((train.len(), eval.len()), (8, 2));
        for r in corpus.records() {
            assert!(train.get(&r.id).is_some() ^ eval.get(&r.id).is_some());
        }
        let (train2, eval2) = split(&corpus, 0.2, 7).unwrap();
        assert_eq!(train.records(), train2.records());
        assert_eq!(eval.records(), eval2.records());
    }

    #[test]
    fn eval_size_matches_published_split() {
        assert_eq!(eval_size(136_250, 0.2), 27_250);
        assert_eq!(136_250 - eval_size(136_250, 0.2), 109_000);
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(split(&corpus_of(1), 0.2, 0).is_err());
        assert!(split(&corpus_of(10), 0.0, 0).is_err());
        assert!(split(&corpus_of(10), 1.0, 0).is_err());
    }

    fn sized_corpus(sizes: &[usize]) -> Corpus {
        let mut records = Vec::new();
        for (t, &size) in sizes.iter().enumerate() {
            for m in 0..size {
                records.push(rec(&format!("t{t}m{m}"), &format!("trope{t}"), 3));
            }
        }
        Corpus::from_records(records).unwrap()
    }

    #[test]
    fn pair_counts_without_negatives() {
        let corpus = sized_corpus(&[2, 3, 5]);
        let pairs: Vec<_> = generate_pairs(&corpus, false, 0).unwrap().collect();
        assert_eq!(pairs.len(), 14);
        assert!(pairs.iter().all(|p| p.label == PairLabel::IsSimilar));
    }

    #[test]
    fn pair_counts_with_negatives() {
        let corpus = sized_corpus(&[2, 3, 5]);
        let pairs: Vec<_> = generate_pairs(&corpus, true, 3).unwrap().collect();
        let pos = pairs.iter().filter(|p| p.label == PairLabel::IsSimilar).count();
        assert_eq!(pos, 14);
        assert_eq!(pairs.len(), 28);
        for w in pairs.chunks(2) {
            assert_eq!(w[1].label, PairLabel::NotSimilar);
            assert_eq!(w[0].a_id, w[1].a_id);
            assert_ne!(
                corpus.get(&w[1].a_id).unwrap().trope,
                corpus.get(&w[1].b_id).unwrap().trope
            );
        }
        let again: Vec<_> = generate_pairs(&corpus, true, 3).unwrap().collect();
        assert_eq!(pairs, again);
    }

    #[test]
    fn negatives_need_two_tropes() {
        let corpus = sized_corpus(&[4]);
        assert!(generate_pairs(&corpus, true, 0).is_err());
        assert!(generate_pairs(&Corpus::default(), false, 0).is_err());
    }

    #[test]
    fn stats_two_point() {
        let corpus =
            Corpus::from_records(vec![rec("a", "t", 100), rec("b", "t", 200)]).unwrap();
        let s = stats(&corpus);
        assert_eq!(s.words_per_character, MeanStd { mean: 150.0, std: 50.0 });
        assert_eq!(s.n_is_similar_pairs, 1);
        assert_eq!(s.n_not_similar_pairs, 0);
    }

    #[test]
    fn stats_empty() {
        let s = stats(&Corpus::default());
        assert_eq!(s.n_characters, 0);
        assert_eq!(s.n_tropes, 0);
        assert_eq!(s.words_per_character, MeanStd { mean: 0.0, std: 0.0 });
        assert_eq!(s.characters_per_trope, MeanStd { mean: 0.0, std: 0.0 });
        assert_eq!(s.n_is_similar_pairs, 0);
        assert!(s.table().contains("Characters"));
    }

    #[test]
    fn pair_file_format() {
        let pair = PairExample {
            a_id: "x".into(),
            b_id: "y".into(),
            label: PairLabel::NotSimilar,
        };
        assert_eq!(
            serde_json::to_string(&pair).unwrap(),
            r#"{"a":"x","b":"y","label":"NotSimilar"}"#
        );
    }
}
