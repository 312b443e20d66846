//! Ranking metrics against trope-derived ground truth, plus the overlap and
//! candidate-budget experiments built on them.
//!
//! All metrics are reported as percentages.

mod overlap;
mod report;
mod sweep;

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use overlap::{overlap_harness, MethodOverlap, OverlapParams, OverlapReport};
pub use report::{evaluate, MetricsAtK, MetricsReport, ReportWarnings};
pub use sweep::{first_argmax, marginal_change, sweep_top_n, trailing_average, MetricSeries, SweepParams, SweepResult};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::pipeline::RefinedRanking;

/// Same-trope partners within an evaluation corpus.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    partners: HashMap<String, HashSet<String>>,
    pair_set: HashSet<(String, String)>,
}

fn unordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl GroundTruth {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut gt = GroundTruth::default();
        for (pos, record) in corpus.records().iter().enumerate() {
            let partners: HashSet<String> = corpus
                .partners_of(pos)
                .map(|p| corpus.record(p).id.clone())
                .collect();
            for p in &partners {
                gt.pair_set.insert(unordered(&record.id, p));
            }
            gt.partners.insert(record.id.clone(), partners);
        }
        gt
    }

    /// Partners of `id`; empty for singletons and unknown ids.
    pub fn partners(&self, id: &str) -> impl Iterator<Item = &str> {
        self.partners.get(id).into_iter().flatten().map(String::as_str)
    }

    pub fn n_partners(&self, id: &str) -> usize {
        self.partners.get(id).map_or(0, HashSet::len)
    }

    pub fn is_partner(&self, query: &str, candidate: &str) -> bool {
        self.partners.get(query).is_some_and(|p| p.contains(candidate))
    }

    pub fn n_pairs(&self) -> usize {
        self.pair_set.len()
    }

    pub fn contains_pair(&self, a: &str, b: &str) -> bool {
        self.pair_set.contains(&unordered(a, b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecallMode {
    /// Each ground-truth pair counts once, if found from either endpoint.
    #[default]
    Dedup,
    /// Every (query, partner) hit counts; may exceed 100.
    Directed,
}

impl std::str::FromStr for RecallMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dedup" => Ok(RecallMode::Dedup),
            "directed" => Ok(RecallMode::Directed),
            other => Err(Error::InvalidArgument(format!("unknown recall mode `{other}`"))),
        }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::InvalidArgument("k must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Share of ground-truth pairs retrieved within the top `k` of some query.
pub fn recall_at_k(rankings: &RefinedRanking, gt: &GroundTruth, k: usize, mode: RecallMode) -> Result<f64> {
    check_k(k)?;
    if gt.n_pairs() == 0 {
        return Err(Error::InvalidArgument("recall is undefined without ground-truth pairs".into()));
    }
    let hits = rankings.queries.iter().flat_map(|q| {
        q.ranked
            .iter()
            .take(k)
            .filter(|c| gt.is_partner(&q.query, &c.id))
            .map(move |c| (q.query.as_str(), c.id.as_str()))
    });
    let found = match mode {
        RecallMode::Directed => hits.count(),
        RecallMode::Dedup => hits.map(|(a, b)| unordered(a, b)).collect::<HashSet<_>>().len(),
    };
    Ok(100.0 * found as f64 / gt.n_pairs() as f64)
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Binary-relevance nDCG@k averaged over all queries; partnerless queries
/// contribute 0.
pub fn ndcg_at_k(rankings: &RefinedRanking, gt: &GroundTruth, k: usize) -> Result<f64> {
    check_k(k)?;
    if rankings.queries.is_empty() {
        return Err(Error::InvalidArgument("nDCG needs at least one query".into()));
    }
    let total: f64 = rankings
        .queries
        .iter()
        .map(|q| {
            let ideal_hits = gt.n_partners(&q.query).min(k);
            if ideal_hits == 0 {
                return 0.0;
            }
            let dcg: f64 = q
                .ranked
                .iter()
                .take(k)
                .enumerate()
                .filter(|(_, c)| gt.is_partner(&q.query, &c.id))
                .map(|(j, _)| discount(j + 1))
                .sum();
            let idcg: f64 = (1..=ideal_hits).map(discount).sum();
            dcg / idcg
        })
        .sum();
    Ok(100.0 * total / rankings.queries.len() as f64)
}

/// Mean reciprocal rank of the first partner over each query's full list.
/// Queries without partners are skipped unless `include_partnerless`.
pub fn mrr(rankings: &RefinedRanking, gt: &GroundTruth, include_partnerless: bool) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for q in &rankings.queries {
        if !include_partnerless && gt.n_partners(&q.query) == 0 {
            continue;
        }
        n += 1;
        if let Some(rank) = q.ranked.iter().position(|c| gt.is_partner(&q.query, &c.id)) {
            total += 1.0 / (rank + 1) as f64;
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("MRR needs at least one eligible query".into()));
    }
    Ok(100.0 * total / n as f64)
}

/// Human or derived relevance judgements for (query, candidate) pairs.
#[derive(Debug, Clone, Default)]
pub struct RelevanceLabels {
    labels: HashMap<(String, String), bool>,
}

#[derive(Deserialize)]
struct LabelLine {
    query: String,
    candidate: String,
    relevant: bool,
}

impl RelevanceLabels {
    pub fn insert(&mut self, query: impl Into<String>, candidate: impl Into<String>, relevant: bool) {
        self.labels.insert((query.into(), candidate.into()), relevant);
    }

    pub fn get(&self, query: &str, candidate: &str) -> Option<bool> {
        self.labels.get(&(query.to_string(), candidate.to_string())).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labels every ranked pair by trope co-membership.
    pub fn from_ground_truth(gt: &GroundTruth, rankings: &RefinedRanking) -> Self {
        let mut labels = RelevanceLabels::default();
        for q in &rankings.queries {
            for c in &q.ranked {
                labels.insert(q.query.clone(), c.id.clone(), gt.is_partner(&q.query, &c.id));
            }
        }
        labels
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut labels = RelevanceLabels::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let l: LabelLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            labels.insert(l.query, l.candidate, l.relevant);
        }
        Ok(labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAtK {
    pub mean: f64,
    /// Population standard deviation across queries.
    pub std: f64,
}

/// Mean over queries of (relevant among top `k`) / `k`. Every evaluated pair
/// must carry a label.
pub fn precision_at_k(rankings: &RefinedRanking, labels: &RelevanceLabels, k: usize) -> Result<PrecisionAtK> {
    check_k(k)?;
    if rankings.queries.is_empty() {
        return Err(Error::InvalidArgument("precision needs at least one query".into()));
    }
    let per_query = rankings
        .queries
        .iter()
        .map(|q| {
            let mut relevant = 0usize;
            for c in q.ranked.iter().take(k) {
                match labels.get(&q.query, &c.id) {
                    Some(true) => relevant += 1,
                    Some(false) => {}
                    None => {
                        return Err(Error::InvalidArgument(format!(
                            "no relevance label for ({}, {})",
                            q.query, c.id
                        )))
                    }
                }
            }
            Ok(100.0 * relevant as f64 / k as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let stats = crate::corpus::MeanStd::of(per_query);
    Ok(PrecisionAtK {
        mean: stats.mean,
        std: stats.std,
    })
}
