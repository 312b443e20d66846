//! Select-then-refine orchestration.
//!
//! `select` keeps the `top_n` most promising candidates per query using a
//! cheap [`CandidateSelector`]; `refine` re-scores exactly those pairs with an
//! expensive [`PairScorer`]. `exhaustive` scores every ordered pair and serves
//! as the reference the two-stage result is checked against.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs::File;
use std::hash::Hasher;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use fnv::FnvHasher;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::scorer::{HeadWeights, PairScorer};
use crate::vectorspace::EmbeddingSet;

pub const DEFAULT_EXHAUSTIVE_CAP: usize = 2000;

/// Produces a ranked list of candidate positions for one query.
pub trait CandidateSelector: Send + Sync {
    fn name(&self) -> &str;

    /// Errors when the selector cannot handle some corpus record.
    fn check_coverage(&self, corpus: &Corpus) -> Result<()>;

    /// Up to `n` other corpus positions with their selection scores, best first.
    fn select_for(&self, corpus: &Corpus, query: usize, n: usize) -> Result<Vec<(usize, f64)>>;
}

/// Keeps the best `n` entries by score descending, then id ascending.
fn keep_best(corpus: &Corpus, mut scored: Vec<(usize, f64)>, n: usize) -> Vec<(usize, f64)> {
    let order = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
        b.1.total_cmp(&a.1)
            .then_with(|| corpus.record(a.0).id.cmp(&corpus.record(b.0).id))
    };
    if n < scored.len() {
        scored.select_nth_unstable_by(n, order);
        scored.truncate(n);
    }
    scored.sort_unstable_by(order);
    scored
}

/// Embedding rows aligned with corpus positions.
fn aligned_rows(embeddings: &EmbeddingSet, corpus: &Corpus) -> Result<Vec<usize>> {
    embeddings.check_coverage(corpus)?;
    Ok(corpus
        .records()
        .iter()
        .map(|r| embeddings.position(&r.id).expect("coverage checked"))
        .collect())
}

/// Cosine similarity over cached embeddings.
#[derive(Debug, Clone)]
pub struct CosineSelector {
    embeddings: Arc<EmbeddingSet>,
}

impl CosineSelector {
    pub fn new(embeddings: Arc<EmbeddingSet>) -> Self {
        CosineSelector { embeddings }
    }
}

impl CandidateSelector for CosineSelector {
    fn name(&self) -> &str {
        "cosine"
    }

    fn check_coverage(&self, corpus: &Corpus) -> Result<()> {
        self.embeddings.check_coverage(corpus)
    }

    fn select_for(&self, corpus: &Corpus, query: usize, n: usize) -> Result<Vec<(usize, f64)>> {
        let e = &self.embeddings;
        let row_of = |pos: usize| {
            let id = &corpus.record(pos).id;
            e.position(id).ok_or_else(|| Error::CoverageGap(vec![id.clone()]))
        };
        let q = row_of(query)?;
        let mut scored = Vec::with_capacity(corpus.len());
        for pos in (0..corpus.len()).filter(|&p| p != query) {
            let r = row_of(pos)?;
            let c = crate::vectorspace::cosine_with_norms(e.row(q), e.row(r), e.norm(q), e.norm(r));
            scored.push((pos, c));
        }
        Ok(keep_best(corpus, scored, n))
    }
}

/// Ranks all other records by the trained head applied to cached embeddings.
#[derive(Debug, Clone)]
pub struct SiameseSelector {
    head: Arc<HeadWeights>,
    embeddings: Arc<EmbeddingSet>,
}

impl SiameseSelector {
    pub fn new(head: Arc<HeadWeights>, embeddings: Arc<EmbeddingSet>) -> Result<Self> {
        if head.dimension != embeddings.dimension() {
            return Err(Error::DimensionMismatch {
                id: "<head>".into(),
                expected: embeddings.dimension(),
                found: head.dimension,
            });
        }
        Ok(SiameseSelector { head, embeddings })
    }
}

impl CandidateSelector for SiameseSelector {
    fn name(&self) -> &str {
        "siamese-head"
    }

    fn check_coverage(&self, corpus: &Corpus) -> Result<()> {
        self.embeddings.check_coverage(corpus)
    }

    fn select_for(&self, corpus: &Corpus, query: usize, n: usize) -> Result<Vec<(usize, f64)>> {
        let rows = aligned_rows(&self.embeddings, corpus)?;
        let q = self.embeddings.row(rows[query]);
        let scored = (0..corpus.len())
            .filter(|&p| p != query)
            .map(|p| (p, self.head.score_rows(q, self.embeddings.row(rows[p]))))
            .collect();
        Ok(keep_best(corpus, scored, n))
    }
}

/// Uniformly random candidates, seeded per query id. Selection scores are 0
/// and the list order is the sampling order.
#[derive(Debug, Clone)]
pub struct RandomSelector {
    seed: u64,
}

impl RandomSelector {
    pub fn new(seed: u64) -> Self {
        RandomSelector { seed }
    }
}

impl CandidateSelector for RandomSelector {
    fn name(&self) -> &str {
        "random"
    }

    fn check_coverage(&self, _: &Corpus) -> Result<()> {
        Ok(())
    }

    fn select_for(&self, corpus: &Corpus, query: usize, n: usize) -> Result<Vec<(usize, f64)>> {
        let mut h = FnvHasher::default();
        h.write_u64(self.seed);
        h.write(corpus.record(query).id.as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        let others = corpus.len().saturating_sub(1);
        Ok(sample(&mut rng, others, n.min(others))
            .into_iter()
            // skip over the query's own position
            .map(|i| (if i >= query { i + 1 } else { i }, 0.0))
            .collect())
    }
}

/// Uses a pairwise scorer over all other records as the selector.
pub struct ScorerSelector<S: ?Sized> {
    scorer: Arc<S>,
}

impl<S: PairScorer + ?Sized> ScorerSelector<S> {
    pub fn new(scorer: Arc<S>) -> Self {
        ScorerSelector { scorer }
    }
}

impl<S: PairScorer + ?Sized> CandidateSelector for ScorerSelector<S> {
    fn name(&self) -> &str {
        self.scorer.name()
    }

    fn check_coverage(&self, _: &Corpus) -> Result<()> {
        Ok(())
    }

    fn select_for(&self, corpus: &Corpus, query: usize, n: usize) -> Result<Vec<(usize, f64)>> {
        let q = corpus.record(query);
        let scored = (0..corpus.len())
            .filter(|&p| p != query)
            .map(|p| Ok((p, self.scorer.score(q, corpus.record(p))?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(keep_best(corpus, scored, n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCandidates {
    pub query: String,
    pub candidates: Vec<String>,
    /// Selection score of each candidate; not part of the file format.
    #[serde(skip)]
    pub select_scores: Vec<f64>,
}

/// Per-query candidates in selection order, queries in corpus order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSet {
    pub queries: Vec<QueryCandidates>,
}

impl CandidateSet {
    pub fn total(&self) -> usize {
        self.queries.iter().map(|q| q.candidates.len()).sum()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_lines(path.as_ref(), &self.queries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(CandidateSet {
            queries: read_lines(path.as_ref())?,
        })
    }

    /// The selection order itself as a ranking. Scores in `[-1, 1]` (such as
    /// cosines) are mapped onto `[0, 1]` by `(s + 1) / 2`.
    pub fn as_ranking(&self) -> RefinedRanking {
        RefinedRanking {
            queries: self
                .queries
                .iter()
                .map(|q| QueryRanking {
                    query: q.query.clone(),
                    ranked: q
                        .candidates
                        .iter()
                        .enumerate()
                        .map(|(rank, id)| {
                            let s = q.select_scores.get(rank).copied().unwrap_or(0.0);
                            RankedCandidate {
                                id: id.clone(),
                                score: s.clamp(0.0, 1.0),
                                select_rank: rank,
                            }
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidate {
    pub id: String,
    pub score: f64,
    /// Position in the query's candidate list before refinement.
    pub select_rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRanking {
    pub query: String,
    pub ranked: Vec<RankedCandidate>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RefinedRanking {
    pub queries: Vec<QueryRanking>,
}

#[derive(Serialize, Deserialize)]
struct RankingLine {
    query: String,
    ranked: Vec<(String, f64)>,
}

impl RefinedRanking {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let lines: Vec<RankingLine> = self
            .queries
            .iter()
            .map(|q| RankingLine {
                query: q.query.clone(),
                ranked: q.ranked.iter().map(|c| (c.id.clone(), c.score)).collect(),
            })
            .collect();
        write_lines(path.as_ref(), &lines)
    }

    /// Reads a ranking file; file order is taken as selection order.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let lines: Vec<RankingLine> = read_lines(path.as_ref())?;
        Ok(RefinedRanking {
            queries: lines
                .into_iter()
                .map(|l| QueryRanking {
                    query: l.query,
                    ranked: l
                        .ranked
                        .into_iter()
                        .enumerate()
                        .map(|(select_rank, (id, score))| RankedCandidate { id, score, select_rank })
                        .collect(),
                })
                .collect(),
        })
    }

    pub fn get(&self, query: &str) -> Option<&QueryRanking> {
        self.queries.iter().find(|q| q.query == query)
    }
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(items)
}

/// How equal refine scores are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Candidate id ascending. Matches the exhaustive reference, so refining
    /// every other record reproduces it exactly.
    #[default]
    Id,
    /// Selection rank ascending, then id.
    SelectRank,
}

fn sort_ranked(ranked: &mut [RankedCandidate], tie_break: TieBreak) {
    ranked.sort_by(|a, b| {
        let by_score = b.score.total_cmp(&a.score);
        match tie_break {
            TieBreak::Id => by_score.then_with(|| a.id.cmp(&b.id)),
            TieBreak::SelectRank => by_score
                .then(a.select_rank.cmp(&b.select_rank))
                .then_with(|| a.id.cmp(&b.id)),
        }
    });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub top_n: usize,
    pub k_values: Vec<usize>,
    pub seed: u64,
    pub tie_break: TieBreak,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            top_n: 25,
            k_values: vec![1, 5, 10],
            seed: 0,
            tie_break: TieBreak::Id,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return Err(Error::InvalidArgument("k values must be non-empty and each >= 1".into()));
        }
        let max_k = *self.k_values.iter().max().expect("non-empty");
        if self.top_n < max_k {
            return Err(Error::InvalidArgument(format!(
                "top_n {} is smaller than the largest k {max_k}",
                self.top_n
            )));
        }
        Ok(())
    }
}

/// Runs `selector` for every query, keeping `min(top_n, n - 1)` candidates each.
pub fn select(corpus: &Corpus, selector: &dyn CandidateSelector, top_n: usize) -> Result<CandidateSet> {
    if top_n == 0 {
        return Err(Error::InvalidArgument("top_n must be at least 1".into()));
    }
    selector.check_coverage(corpus)?;
    let queries = (0..corpus.len())
        .into_par_iter()
        .map(|q| {
            let picked = selector.select_for(corpus, q, top_n)?;
            Ok(QueryCandidates {
                query: corpus.record(q).id.clone(),
                candidates: picked.iter().map(|&(p, _)| corpus.record(p).id.clone()).collect(),
                select_scores: picked.iter().map(|&(_, s)| s).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidateSet { queries })
}

fn scoring_error(scorer: &dyn PairScorer, query: &str, candidate: &str, source: Error) -> Error {
    Error::Scoring {
        scorer: scorer.name().to_string(),
        query: query.to_string(),
        candidate: candidate.to_string(),
        source: Box::new(source),
    }
}

fn checked_score(scorer: &dyn PairScorer, corpus: &Corpus, q: usize, c: usize) -> Result<f64> {
    let (query, candidate) = (corpus.record(q), corpus.record(c));
    match scorer.score(query, candidate) {
        Ok(s) if (0.0..=1.0).contains(&s) => Ok(s),
        Ok(s) => Err(scoring_error(
            scorer,
            &query.id,
            &candidate.id,
            Error::InvalidArgument(format!("score {s} outside [0, 1]")),
        )),
        Err(e) => Err(scoring_error(scorer, &query.id, &candidate.id, e)),
    }
}

/// Scores each (query, candidate) pair once, in candidate order, and sorts
/// each query's list by score. Any scorer error aborts the whole run.
pub fn refine(
    corpus: &Corpus,
    candidates: &CandidateSet,
    scorer: &dyn PairScorer,
    tie_break: TieBreak,
) -> Result<RefinedRanking> {
    let resolve = |id: &str| corpus.position(id).ok_or_else(|| Error::UnknownId(id.to_string()));
    let mut plan = Vec::with_capacity(candidates.queries.len());
    for qc in &candidates.queries {
        let q = resolve(&qc.query)?;
        let mut seen = HashSet::with_capacity(qc.candidates.len());
        let mut cands = Vec::with_capacity(qc.candidates.len());
        for id in &qc.candidates {
            if id == &qc.query || !seen.insert(id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "candidate list for `{}` has a self or duplicate entry `{id}`",
                    qc.query
                )));
            }
            cands.push(resolve(id)?);
        }
        plan.push((q, cands));
    }

    let before = scorer.calls();
    let queries = plan
        .par_iter()
        .map(|(q, cands)| {
            let mut ranked = cands
                .iter()
                .enumerate()
                .map(|(rank, &c)| {
                    Ok(RankedCandidate {
                        id: corpus.record(c).id.clone(),
                        score: checked_score(scorer, corpus, *q, c)?,
                        select_rank: rank,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            sort_ranked(&mut ranked, tie_break);
            Ok(QueryRanking {
                query: corpus.record(*q).id.clone(),
                ranked,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let expected = candidates.total() as u64;
    let observed = scorer.calls() - before;
    if observed != expected {
        return Err(Error::BudgetViolation { expected, observed });
    }
    Ok(RefinedRanking { queries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExhaustiveLimit {
    pub max_records: usize,
    pub allow_large: bool,
}

impl Default for ExhaustiveLimit {
    fn default() -> Self {
        ExhaustiveLimit {
            max_records: DEFAULT_EXHAUSTIVE_CAP,
            allow_large: false,
        }
    }
}

/// Scores every ordered pair of distinct records; ranks by score descending,
/// then id ascending.
pub fn exhaustive(corpus: &Corpus, scorer: &dyn PairScorer, limit: ExhaustiveLimit) -> Result<RefinedRanking> {
    let n = corpus.len();
    if n > limit.max_records && !limit.allow_large {
        return Err(Error::ExhaustiveCap {
            records: n,
            cap: limit.max_records,
            calls: (n as u64) * (n as u64).saturating_sub(1),
        });
    }
    let queries = (0..n)
        .into_par_iter()
        .map(|q| {
            let mut ranked = Vec::with_capacity(n.saturating_sub(1));
            for c in 0..n {
                if c == q {
                    continue;
                }
                let score = checked_score(scorer, corpus, q, c)?;
                ranked.push(RankedCandidate {
                    id: corpus.record(c).id.clone(),
                    score,
                    select_rank: ranked.len(),
                });
            }
            ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
            Ok(QueryRanking {
                query: corpus.record(q).id.clone(),
                ranked,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RefinedRanking { queries })
}

/// Per-query prefix of length `min(k, len)`.
pub fn top_k(ranking: &RefinedRanking, k: usize) -> Result<RefinedRanking> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(RefinedRanking {
        queries: ranking
            .queries
            .iter()
            .map(|q| QueryRanking {
                query: q.query.clone(),
                ranked: q.ranked.iter().take(k).cloned().collect(),
            })
            .collect(),
    })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub candidates: CandidateSet,
    pub ranking: RefinedRanking,
    pub effective_top_n: usize,
    pub scorer_calls: u64,
    pub warnings: Vec<String>,
}

/// Full select-and-refine run. `top_n` above `n - 1` is clamped with a warning.
pub fn run(
    corpus: &Corpus,
    selector: &dyn CandidateSelector,
    scorer: &dyn PairScorer,
    config: &RunConfig,
) -> Result<RunOutput> {
    config.validate()?;
    if corpus.len() < 2 {
        return Err(Error::InvalidArgument("select-and-refine needs at least two records".into()));
    }
    let mut warnings = Vec::new();
    let max_top_n = corpus.len() - 1;
    let effective_top_n = if config.top_n > max_top_n {
        let msg = format!(
            "top_n {} exceeds the {} other records; clamped to {max_top_n}",
            config.top_n,
            corpus.len() - 1
        );
        log::warn!("{msg}");
        warnings.push(msg);
        max_top_n
    } else {
        config.top_n
    };
    let candidates = select(corpus, selector, effective_top_n)?;
    let before = scorer.calls();
    let ranking = refine(corpus, &candidates, scorer, config.tie_break)?;
    let scorer_calls = scorer.calls() - before;
    let expected = (corpus.len() * effective_top_n) as u64;
    if scorer_calls != expected {
        return Err(Error::BudgetViolation {
            expected,
            observed: scorer_calls,
        });
    }
    Ok(RunOutput {
        candidates,
        ranking,
        effective_top_n,
        scorer_calls,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CharacterRecord;
    use crate::scorer::{ConstantScorer, IdfTable, LexicalScorer};
    use crate::synth::{generate, planted_scorer, GroupSize, SynthConfig};
    use crate::vectorspace::{embed_all, fit_embedder, top_n_neighbors, EmbedderKind, EmbedderParams, Vector};

    fn one_hot_corpus() -> (Corpus, Arc<EmbeddingSet>) {
        let rows: [(&str, [f64; 3]); 3] = [("a", [1.0, 0.0, 0.0]), ("b", [0.9, 0.1, 0.0]), ("c", [0.0, 0.2, 1.0])];
        let corpus = Corpus::from_records(
            rows.iter()
                .map(|(id, _)| CharacterRecord {
                    id: id.to_string(),
                    name: String::new(),
                    trope: "t".into(),
                    description: format!("text of {id}"),
                })
                .collect(),
        )
        .unwrap();
        let mut set = EmbeddingSet::new(3).unwrap();
        for (id, v) in rows {
            set.insert(id, Vector::new(v.to_vec()).unwrap()).unwrap();
        }
        (corpus, Arc::new(set))
    }

    fn synth(groups: usize, members: usize, seed: u64) -> Corpus {
        generate(&SynthConfig {
            n_groups: groups,
            members_per_group: GroupSize::Fixed(members),
            seed,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn top_one_is_cosine_argmax() {
        let (corpus, set) = one_hot_corpus();
        let cands = select(&corpus, &CosineSelector::new(set), 1).unwrap();
        let picks: Vec<_> = cands.queries.iter().map(|q| q.candidates[0].as_str()).collect();
        assert_eq!(picks, ["b", "a", "b"]);
    }

    #[test]
    fn full_budget_selects_everyone() {
        let corpus = synth(4, 3, 0);
        let set = Arc::new(embed_all(
            &fit_embedder(EmbedderKind::Bow, &corpus, &EmbedderParams::default()).unwrap(),
            &corpus,
        ));
        let cands = select(&corpus, &CosineSelector::new(set), corpus.len() - 1).unwrap();
        for q in &cands.queries {
            let mut ids: Vec<_> = q.candidates.clone();
            ids.sort();
            let mut expected: Vec<_> = corpus.records().iter().map(|r| r.id.clone()).filter(|id| id != &q.query).collect();
            expected.sort();
            assert_eq!(ids, expected);
        }
    }

    #[test]
    fn cosine_select_matches_full_sort_oracle() {
        let corpus = synth(40, 5, 3);
        let e = fit_embedder(EmbedderKind::Hashed, &corpus, &EmbedderParams { hashed_dim: 32 }).unwrap();
        let set = Arc::new(embed_all(&e, &corpus));
        let cands = select(&corpus, &CosineSelector::new(Arc::clone(&set)), 15).unwrap();
        for q in &cands.queries {
            // oracle: score everything, full sort, take a prefix
            let qv = Vector::new(set.get(&q.query).unwrap().to_vec()).unwrap();
            let mut all: Vec<(f64, String)> = corpus
                .records()
                .iter()
                .filter(|r| r.id != q.query)
                .map(|r| {
                    let v = Vector::new(set.get(&r.id).unwrap().to_vec()).unwrap();
                    (crate::vectorspace::cosine(&qv, &v).unwrap(), r.id.clone())
                })
                .collect();
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let oracle: Vec<_> = all.into_iter().take(15).map(|(_, id)| id).collect();
            assert_eq!(q.candidates, oracle);
            let nl = top_n_neighbors(&q.query, &set, 15).unwrap();
            assert_eq!(nl.neighbors.iter().map(|n| n.id.clone()).collect::<Vec<_>>(), q.candidates);
        }
    }

    #[test]
    fn coverage_gap_lists_missing_ids() {
        let (corpus, _) = one_hot_corpus();
        let mut partial = EmbeddingSet::new(1).unwrap();
        partial.insert("a", Vector::new(vec![1.0]).unwrap()).unwrap();
        match select(&corpus, &CosineSelector::new(Arc::new(partial)), 1) {
            Err(Error::CoverageGap(ids)) => assert_eq!(ids, ["b", "c"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constant_scorer_keeps_select_order_under_select_rank_ties() {
        let corpus = synth(5, 4, 1);
        let set = Arc::new(embed_all(
            &fit_embedder(EmbedderKind::Tfidf, &corpus, &EmbedderParams::default()).unwrap(),
            &corpus,
        ));
        let cands = select(&corpus, &CosineSelector::new(set), 6).unwrap();
        let scorer = ConstantScorer::new(0.5).unwrap();
        let ranking = refine(&corpus, &cands, &scorer, TieBreak::SelectRank).unwrap();
        for (q, r) in cands.queries.iter().zip(&ranking.queries) {
            let ids: Vec<_> = r.ranked.iter().map(|c| c.id.clone()).collect();
            assert_eq!(ids, q.candidates);
        }
        assert_eq!(scorer.calls(), (corpus.len() * 6) as u64);
        // default tie break orders equal scores by id
        let by_id = refine(&corpus, &cands, &scorer, TieBreak::Id).unwrap();
        for r in &by_id.queries {
            assert!(r.ranked.windows(2).all(|w| w[0].id < w[1].id));
        }
    }

    #[test]
    fn full_budget_refine_equals_exhaustive() {
        let corpus = synth(6, 4, 2);
        let set = Arc::new(embed_all(
            &fit_embedder(EmbedderKind::Bow, &corpus, &EmbedderParams::default()).unwrap(),
            &corpus,
        ));
        let scorer = LexicalScorer::new(IdfTable::fit(&corpus)).with_cache(&corpus);
        let config = RunConfig {
            top_n: corpus.len() - 1,
            k_values: vec![1],
            ..RunConfig::default()
        };
        let out = run(&corpus, &CosineSelector::new(set), &scorer, &config).unwrap();
        let reference = exhaustive(&corpus, &scorer, ExhaustiveLimit::default()).unwrap();
        let ids = |r: &RefinedRanking| -> Vec<Vec<(String, u64)>> {
            r.queries.iter().map(|q| q.ranked.iter().map(|c| (c.id.clone(), c.score.to_bits())).collect()).collect()
        };
        assert_eq!(ids(&out.ranking), ids(&reference));
    }

    #[test]
    fn run_clamps_and_counts() {
        let corpus = synth(1, 5, 0);
        let set = Arc::new(embed_all(
            &fit_embedder(EmbedderKind::Bow, &corpus, &EmbedderParams::default()).unwrap(),
            &corpus,
        ));
        let scorer = planted_scorer(&corpus, 0.0, 0).unwrap();
        let config = RunConfig {
            top_n: 10,
            ..RunConfig::default()
        };
        let out = run(&corpus, &CosineSelector::new(set), &scorer, &config).unwrap();
        assert_eq!(out.effective_top_n, 4);
        assert_eq!(out.warnings.len(), 1);
        assert_eq!(out.scorer_calls, 20);
        assert!(out.ranking.queries.iter().all(|q| q.ranked.len() == 4));
    }

    #[test]
    fn refine_fails_fast_with_context() {
        struct Flaky(crate::scorer::CallCounter);
        impl PairScorer for Flaky {
            fn name(&self) -> &str {
                "flaky"
            }
            fn score(&self, q: &CharacterRecord, c: &CharacterRecord) -> Result<f64> {
                self.0.bump();
                if q.id == "b" && c.id == "c" {
                    Err(Error::Timeout(7))
                } else {
                    Ok(0.3)
                }
            }
            fn calls(&self) -> u64 {
                self.0.get()
            }
        }
        let (corpus, set) = one_hot_corpus();
        let cands = select(&corpus, &CosineSelector::new(set), 2).unwrap();
        match refine(&corpus, &cands, &Flaky(Default::default()), TieBreak::Id) {
            Err(Error::Scoring { query, candidate, .. }) => assert_eq!((query.as_str(), candidate.as_str()), ("b", "c")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_candidates_rejected() {
        let (corpus, _) = one_hot_corpus();
        let scorer = ConstantScorer::new(0.5).unwrap();
        for cands in [vec!["a".to_string()], vec!["b".into(), "b".into()], vec!["zz".into()]] {
            let set = CandidateSet {
                queries: vec![QueryCandidates {
                    query: "a".into(),
                    candidates: cands,
                    select_scores: vec![],
                }],
            };
            assert!(refine(&corpus, &set, &scorer, TieBreak::Id).is_err());
        }
    }

    #[test]
    fn exhaustive_cap() {
        let corpus = synth(3, 4, 0);
        let scorer = ConstantScorer::new(0.5).unwrap();
        let limit = ExhaustiveLimit {
            max_records: 10,
            allow_large: false,
        };
        assert!(matches!(exhaustive(&corpus, &scorer, limit), Err(Error::ExhaustiveCap { records: 12, .. })));
        let r = exhaustive(&corpus, &scorer, ExhaustiveLimit { allow_large: true, ..limit }).unwrap();
        assert_eq!(scorer.calls(), 12 * 11);
        assert_eq!(r.queries.len(), 12);
    }

    #[test]
    fn top_k_prefixes() {
        let corpus = synth(3, 4, 0);
        let scorer = planted_scorer(&corpus, 0.2, 1).unwrap();
        let r = exhaustive(&corpus, &scorer, ExhaustiveLimit::default()).unwrap();
        for k in 1..12 {
            let a = top_k(&r, k).unwrap();
            let b = top_k(&r, k + 1).unwrap();
            for (qa, qb) in a.queries.iter().zip(&b.queries) {
                assert_eq!(qa.ranked.len(), k.min(11));
                assert_eq!(&qb.ranked[..qa.ranked.len()], &qa.ranked[..]);
            }
        }
        assert!(top_k(&r, 0).is_err());
    }

    #[test]
    fn random_selector_excludes_self() {
        let corpus = synth(4, 5, 0);
        let cands = select(&corpus, &RandomSelector::new(3), 7).unwrap();
        for q in &cands.queries {
            assert_eq!(q.candidates.len(), 7);
            assert!(!q.candidates.contains(&q.query));
            let unique: HashSet<_> = q.candidates.iter().collect();
            assert_eq!(unique.len(), 7);
        }
        assert_eq!(cands, select(&corpus, &RandomSelector::new(3), 7).unwrap());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synth(2, 3, 0);
        let scorer = planted_scorer(&corpus, 0.1, 0).unwrap();
        let r = exhaustive(&corpus, &scorer, ExhaustiveLimit::default()).unwrap();
        let path = dir.path().join("ranking.jsonl");
        r.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(r#"{"query":"g0000m000","ranked":[["#));
        let back = RefinedRanking::load(&path).unwrap();
        for (a, b) in r.queries.iter().zip(&back.queries) {
            assert_eq!(a.ranked.iter().map(|c| (&c.id, c.score)).collect::<Vec<_>>(), b.ranked.iter().map(|c| (&c.id, c.score)).collect::<Vec<_>>());
        }
        let cands = select(&corpus, &RandomSelector::new(0), 2).unwrap();
        let cpath = dir.path().join("candidates.jsonl");
        cands.write(&cpath).unwrap();
        let back = CandidateSet::load(&cpath).unwrap();
        assert_eq!(back.queries[0].candidates, cands.queries[0].candidates);
        assert!(std::fs::read_to_string(&cpath).unwrap().starts_with(r#"{"query":"g0000m000","candidates":["#));
    }
}
