use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, MeanStd};
use crate::error::{Error, Result};
use crate::pipeline::CandidateSelector;
use crate::scorer::PairScorer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapParams {
    pub n_queries: usize,
    pub oracle_top: usize,
    pub select_top: usize,
    pub seed: u64,
}

impl Default for OverlapParams {
    fn default() -> Self {
        OverlapParams {
            n_queries: 100,
            oracle_top: 100,
            select_top: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOverlap {
    pub method: String,
    /// Mean share of the oracle's top list captured, in percent.
    pub overlap: f64,
    pub std_error: f64,
    pub per_query: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub params: OverlapParams,
    pub queries: Vec<String>,
    pub methods: Vec<MethodOverlap>,
    pub oracle_scorer_calls: u64,
}

/// How much of the refine scorer's own top `oracle_top` each selection
/// method's top `select_top` recovers, on a random sample of queries.
pub fn overlap_harness(
    corpus: &Corpus,
    refine_scorer: &dyn PairScorer,
    methods: &[&dyn CandidateSelector],
    params: OverlapParams,
) -> Result<OverlapReport> {
    let n = corpus.len();
    if params.select_top >= n {
        return Err(Error::InvalidArgument(format!(
            "select_top {} must be below the corpus size {n}",
            params.select_top
        )));
    }
    if params.n_queries == 0 || params.n_queries > n {
        return Err(Error::InvalidArgument(format!(
            "n_queries must be in 1..={n}, got {}",
            params.n_queries
        )));
    }
    if params.oracle_top == 0 || params.oracle_top > n - 1 {
        return Err(Error::InvalidArgument(format!(
            "oracle_top must be in 1..={}, got {}",
            n - 1,
            params.oracle_top
        )));
    }
    for m in methods {
        m.check_coverage(corpus)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut queries = rand::seq::index::sample(&mut rng, n, params.n_queries).into_vec();
    queries.sort_unstable();

    let before = refine_scorer.calls();
    let oracle: Vec<HashSet<usize>> = queries
        .par_iter()
        .map(|&q| {
            let mut scored = Vec::with_capacity(n - 1);
            for c in (0..n).filter(|&c| c != q) {
                let s = refine_scorer.score(corpus.record(q), corpus.record(c))?;
                scored.push((c, s));
            }
            scored.sort_by(|a, b| {
                b.1.total_cmp(&a.1)
                    .then_with(|| corpus.record(a.0).id.cmp(&corpus.record(b.0).id))
            });
            Ok(scored.into_iter().take(params.oracle_top).map(|(c, _)| c).collect())
        })
        .collect::<Result<_>>()?;
    let oracle_scorer_calls = refine_scorer.calls() - before;

    let methods = methods
        .iter()
        .map(|m| {
            let per_query = queries
                .par_iter()
                .zip(&oracle)
                .map(|(&q, top)| {
                    let picked = m.select_for(corpus, q, params.select_top)?;
                    let hits = picked.iter().filter(|(c, _)| top.contains(c)).count();
                    Ok(100.0 * hits as f64 / params.oracle_top as f64)
                })
                .collect::<Result<Vec<f64>>>()?;
            let stats = MeanStd::of(per_query.iter().copied());
            Ok(MethodOverlap {
                method: m.name().to_string(),
                overlap: stats.mean,
                std_error: stats.std / (per_query.len() as f64).sqrt(),
                per_query,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(OverlapReport {
        params,
        queries: queries.iter().map(|&q| corpus.record(q).id.clone()).collect(),
        methods,
        oracle_scorer_calls,
    })
}
