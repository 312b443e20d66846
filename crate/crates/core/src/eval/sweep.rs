use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{mrr, ndcg_at_k, recall_at_k, GroundTruth, RecallMode};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::pipeline::{refine, select, CandidateSelector, QueryRanking, RefinedRanking, TieBreak};
use crate::scorer::PairScorer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    pub start: usize,
    /// Inclusive upper end of the range.
    pub end: usize,
    pub step: usize,
    pub smooth_window: usize,
    pub k_values: Vec<usize>,
    pub recall_mode: RecallMode,
    pub tie_break: TieBreak,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            start: 1,
            end: 500,
            step: 1,
            smooth_window: 10,
            k_values: vec![1, 5, 10],
            recall_mode: RecallMode::Dedup,
            tie_break: TieBreak::Id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub metric: String,
    /// One value per swept top_n.
    pub values: Vec<f64>,
    /// Change per unit of top_n; entry `i` pairs with `top_n[i + 1]`.
    pub marginal: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub best_top_n: usize,
    pub zero_crossing_top_n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub top_n: Vec<usize>,
    pub metrics: Vec<MetricSeries>,
    pub params: SweepParams,
    pub scorer_calls: u64,
    pub refine_passes: usize,
}

/// `(values[i] - values[i - 1]) / step` for each consecutive pair.
pub fn marginal_change(values: &[f64], step: usize) -> Vec<f64> {
    values.windows(2).map(|w| (w[1] - w[0]) / step as f64).collect()
}

/// Mean of the last `window` points up to and including each index.
pub fn trailing_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let slice = &values[lo..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

/// Index of the first maximum.
pub fn first_argmax(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

impl MetricSeries {
    fn build(metric: String, values: Vec<f64>, top_n: &[usize], step: usize, window: usize) -> Self {
        let marginal = marginal_change(&values, step);
        let smoothed = trailing_average(&marginal, window);
        let best_top_n = top_n[first_argmax(&values).unwrap_or(0)];
        let zero_crossing_top_n = smoothed.iter().position(|&v| v <= 0.0).map(|i| top_n[i + 1]);
        MetricSeries {
            metric,
            values,
            marginal,
            smoothed,
            best_top_n,
            zero_crossing_top_n,
        }
    }
}

fn prefix(full: &RefinedRanking, m: usize) -> RefinedRanking {
    RefinedRanking {
        queries: full
            .queries
            .iter()
            .map(|q| QueryRanking {
                query: q.query.clone(),
                ranked: q.ranked.iter().filter(|c| c.select_rank < m).cloned().collect(),
            })
            .collect(),
    }
}

/// Evaluates every top_n in the range from a single select and a single
/// refinement pass at the largest top_n: the candidates for a smaller budget
/// are a prefix of the selection, so their scores are already known.
pub fn sweep_top_n(
    corpus: &Corpus,
    gt: &GroundTruth,
    selector: &dyn CandidateSelector,
    scorer: &dyn PairScorer,
    params: &SweepParams,
) -> Result<SweepResult> {
    let n = corpus.len();
    if params.step == 0 {
        return Err(Error::InvalidArgument("sweep step must be at least 1".into()));
    }
    if params.start == 0 || params.start > params.end || params.end + 1 > n {
        return Err(Error::InvalidArgument(format!(
            "sweep range {}..={} must lie within 1..={}",
            params.start,
            params.end,
            n.saturating_sub(1)
        )));
    }
    if params.k_values.is_empty() || params.k_values.contains(&0) {
        return Err(Error::InvalidArgument("k values must be non-empty and at least 1".into()));
    }
    let top_n: Vec<usize> = (params.start..=params.end).step_by(params.step).collect();
    let max_top_n = *top_n.last().expect("range is non-empty");

    let candidates = select(corpus, selector, max_top_n)?;
    let before = scorer.calls();
    let full = refine(corpus, &candidates, scorer, params.tie_break)?;
    let scorer_calls = scorer.calls() - before;
    let expected = (n * max_top_n) as u64;
    if scorer_calls != expected {
        return Err(Error::BudgetViolation {
            expected,
            observed: scorer_calls,
        });
    }

    let mut names = Vec::new();
    for k in &params.k_values {
        names.push(format!("recall@{k}"));
        names.push(format!("ndcg@{k}"));
    }
    names.push("mrr".to_string());
    let has_partnered = full.queries.iter().any(|q| gt.n_partners(&q.query) > 0);

    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(top_n.len()); names.len()];
    for &m in &top_n {
        let ranking = prefix(&full, m);
        let mut col = 0;
        for &k in &params.k_values {
            columns[col].push(recall_at_k(&ranking, gt, k, params.recall_mode)?);
            columns[col + 1].push(ndcg_at_k(&ranking, gt, k)?);
            col += 2;
        }
        columns[col].push(if has_partnered { mrr(&ranking, gt, false)? } else { 0.0 });
    }

    let metrics = names
        .into_iter()
        .zip(columns)
        .map(|(name, values)| MetricSeries::build(name, values, &top_n, params.step, params.smooth_window))
        .collect();
    Ok(SweepResult {
        top_n,
        metrics,
        params: params.clone(),
        scorer_calls,
        refine_passes: 1,
    })
}

impl SweepResult {
    pub fn metric(&self, name: &str) -> Option<&MetricSeries> {
        self.metrics.iter().find(|m| m.metric == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per top_n, one column per metric.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("top_n");
        for m in &self.metrics {
            out.push('\t');
            out.push_str(&m.metric);
        }
        out.push('\n');
        for (i, t) in self.top_n.iter().enumerate() {
            let _ = write!(out, "{t}");
            for m in &self.metrics {
                let _ = write!(out, "\t{:.6}", m.values[i]);
            }
            out.push('\n');
        }
        out
    }

    /// Two-column `top_n`, smoothed marginal change series for plotting.
    pub fn series_tsv(&self, metric: &str) -> Option<String> {
        let m = self.metric(metric)?;
        let mut out = String::from("top_n\tsmoothed_marginal\n");
        for (t, v) in self.top_n.iter().skip(1).zip(&m.smoothed) {
            let _ = writeln!(out, "{t}\t{v:.6}");
        }
        Some(out)
    }
}
