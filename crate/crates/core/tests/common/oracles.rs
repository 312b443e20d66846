//! Naive re-implementations of the ranking metrics that work directly from
//! trope labels and ranked id lists.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tropeline::corpus::{CharacterRecord, Corpus};
use tropeline::pipeline::{QueryRanking, RankedCandidate, RefinedRanking};

pub struct Instance {
    pub corpus: Corpus,
    pub label: HashMap<String, usize>,
    pub lists: Vec<(String, Vec<String>)>,
}

pub fn instance(n: usize, n_labels: usize, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<CharacterRecord> = (0..n)
        .map(|i| CharacterRecord {
            id: format!("r{i:03}"),
            name: String::new(),
            trope: format!("t{}", rng.random_range(0..n_labels)),
            description: "text".into(),
        })
        .collect();
    let label = records
        .iter()
        .map(|r| (r.id.clone(), r.trope[1..].parse().unwrap()))
        .collect();
    let mut lists = Vec::new();
    for r in &records {
        if rng.random_bool(0.15) {
            continue;
        }
        let mut others: Vec<String> = records.iter().filter(|o| o.id != r.id).map(|o| o.id.clone()).collect();
        others.shuffle(&mut rng);
        let len = rng.random_range(0..=others.len());
        others.truncate(len);
        lists.push((r.id.clone(), others));
    }
    Instance {
        corpus: Corpus::from_records(records).unwrap(),
        label,
        lists,
    }
}

pub fn ranking(lists: &[(String, Vec<String>)]) -> RefinedRanking {
    RefinedRanking {
        queries: lists
            .iter()
            .map(|(q, ids)| QueryRanking {
                query: q.clone(),
                ranked: ids
                    .iter()
                    .enumerate()
                    .map(|(i, id)| RankedCandidate {
                        id: id.clone(),
                        score: 1.0 / (i + 1) as f64,
                        select_rank: i,
                    })
                    .collect(),
            })
            .collect(),
    }
}

pub fn same(inst: &Instance, a: &str, b: &str) -> bool {
    a != b && inst.label[a] == inst.label[b]
}

pub fn oracle_pairs(inst: &Instance) -> Vec<(String, String)> {
    let ids: Vec<&String> = inst.corpus.records().iter().map(|r| &r.id).collect();
    let mut pairs = Vec::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            if same(inst, ids[i], ids[j]) {
                pairs.push((ids[i].clone(), ids[j].clone()));
            }
        }
    }
    pairs
}

pub fn oracle_recall(inst: &Instance, k: usize, directed: bool) -> Option<f64> {
    let pairs = oracle_pairs(inst);
    if pairs.is_empty() {
        return None;
    }
    let in_top = |q: &str, c: &str| {
        inst.lists
            .iter()
            .any(|(qq, ids)| qq == q && ids.iter().take(k).any(|x| x == c))
    };
    let found: usize = pairs
        .iter()
        .map(|(a, b)| {
            let (ab, ba) = (in_top(a, b) as usize, in_top(b, a) as usize);
            if directed {
                ab + ba
            } else {
                (ab + ba).min(1)
            }
        })
        .sum();
    Some(100.0 * found as f64 / pairs.len() as f64)
}

pub fn oracle_ndcg(inst: &Instance, k: usize) -> f64 {
    let mut total = 0.0;
    for (q, ids) in &inst.lists {
        let partners = inst.corpus.records().iter().filter(|r| same(inst, q, &r.id)).count();
        if partners == 0 {
            continue;
        }
        let mut dcg = 0.0;
        for (j, c) in ids.iter().take(k).enumerate() {
            if same(inst, q, c) {
                dcg += 1.0 / ((j + 2) as f64).log2();
            }
        }
        let mut idcg = 0.0;
        for j in 0..partners.min(k) {
            idcg += 1.0 / ((j + 2) as f64).log2();
        }
        total += dcg / idcg;
    }
    100.0 * total / inst.lists.len() as f64
}

pub fn oracle_mrr(inst: &Instance, include_partnerless: bool) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0;
    for (q, ids) in &inst.lists {
        let has_partner = inst.corpus.records().iter().any(|r| same(inst, q, &r.id));
        if !has_partner && !include_partnerless {
            continue;
        }
        count += 1;
        for (j, c) in ids.iter().enumerate() {
            if same(inst, q, c) {
                sum += 1.0 / (j + 1) as f64;
                break;
            }
        }
    }
    (count > 0).then(|| 100.0 * sum / count as f64)
}

pub fn oracle_precision(inst: &Instance, k: usize) -> (f64, f64) {
    let per: Vec<f64> = inst
        .lists
        .iter()
        .map(|(q, ids)| 100.0 * ids.iter().take(k).filter(|c| same(inst, q, c)).count() as f64 / k as f64)
        .collect();
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    let var = per.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / per.len() as f64;
    (mean, var.sqrt())
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}
