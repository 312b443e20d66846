use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{mrr, ndcg_at_k, precision_at_k, recall_at_k, GroundTruth, RecallMode, RelevanceLabels};
use crate::error::{Error, Result};
use crate::pipeline::RefinedRanking;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsAtK {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub precision_std: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportWarnings {
    /// Directed recall values above 100.
    pub recall_over_100: usize,
    /// Queries with no same-trope partner in the evaluation corpus.
    pub partnerless_queries: usize,
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub recall_mode: RecallMode,
    pub n_queries: usize,
    pub n_ground_truth_pairs: usize,
    pub at_k: Vec<MetricsAtK>,
    /// Over queries that have at least one partner.
    pub mrr: f64,
    pub mrr_including_partnerless: f64,
    pub config: serde_json::Value,
    pub warnings: ReportWarnings,
}

/// Computes every metric for each `k`. Precision is included only when
/// labels are supplied.
pub fn evaluate(
    rankings: &RefinedRanking,
    gt: &GroundTruth,
    k_values: &[usize],
    mode: RecallMode,
    labels: Option<&RelevanceLabels>,
    config: serde_json::Value,
) -> Result<MetricsReport> {
    if k_values.is_empty() {
        return Err(Error::InvalidArgument("at least one k is required".into()));
    }
    let mut warnings = ReportWarnings {
        partnerless_queries: rankings.queries.iter().filter(|q| gt.n_partners(&q.query) == 0).count(),
        ..ReportWarnings::default()
    };
    let mut at_k = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let recall = recall_at_k(rankings, gt, k, mode)?;
        if recall > 100.0 {
            warnings.recall_over_100 += 1;
            warnings
                .messages
                .push(format!("directed recall@{k} is {recall:.2}, above 100"));
        }
        let precision = labels.map(|l| precision_at_k(rankings, l, k)).transpose()?;
        at_k.push(MetricsAtK {
            k,
            recall,
            ndcg: ndcg_at_k(rankings, gt, k)?,
            precision: precision.map(|p| p.mean),
            precision_std: precision.map(|p| p.std),
        });
    }
    let mrr_partnered = if warnings.partnerless_queries < rankings.queries.len() {
        mrr(rankings, gt, false)?
    } else {
        warnings.messages.push("no query has a partner; MRR reported as 0".into());
        0.0
    };
    let mrr_all = if rankings.queries.is_empty() {
        0.0
    } else {
        mrr(rankings, gt, true)?
    };
    for m in &warnings.messages {
        log::warn!("{m}");
    }
    Ok(MetricsReport {
        recall_mode: mode,
        n_queries: rankings.queries.len(),
        n_ground_truth_pairs: gt.n_pairs(),
        at_k,
        mrr: mrr_partnered,
        mrr_including_partnerless: mrr_all,
        config,
        warnings,
    })
}

impl MetricsReport {
    pub fn at(&self, k: usize) -> Option<&MetricsAtK> {
        self.at_k.iter().find(|m| m.k == k)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `metric`, `k`, `value` rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tk\tvalue\n");
        for m in &self.at_k {
            let _ = writeln!(out, "recall\t{}\t{:.4}", m.k, m.recall);
            let _ = writeln!(out, "ndcg\t{}\t{:.4}", m.k, m.ndcg);
            if let (Some(p), Some(s)) = (m.precision, m.precision_std) {
                let _ = writeln!(out, "precision\t{}\t{p:.4}", m.k);
                let _ = writeln!(out, "precision_std\t{}\t{s:.4}", m.k);
            }
        }
        let _ = writeln!(out, "mrr\t-\t{:.4}", self.mrr);
        let _ = writeln!(out, "mrr_including_partnerless\t-\t{:.4}", self.mrr_including_partnerless);
        out
    }
}
