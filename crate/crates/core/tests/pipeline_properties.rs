mod common;

use std::collections::HashSet;
use std::sync::Arc;

use proptest::prelude::*;
use tropeline::corpus::{eval_size, generate_pairs, split, stats, PairLabel};
use tropeline::pipeline::{refine, run, select, CosineSelector, RandomSelector, RunConfig, TieBreak};
use tropeline::scorer::{IdfTable, LexicalScorer, PairScorer};
use tropeline::synth::planted_scorer;
use tropeline::vectorspace::{embed_all, fit_embedder, EmbedderKind, EmbedderParams};

use common::planted_corpus;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn refine_permutes_candidates_and_spends_exact_budget(
        groups in 2usize..8, members in 1usize..6, seed in any::<u64>(), top_n in 1usize..12,
    ) {
        let corpus = planted_corpus(groups, members, seed);
        prop_assume!(corpus.len() >= 2);
        let embedder = fit_embedder(EmbedderKind::Hashed, &corpus, &EmbedderParams { hashed_dim: 32 }).unwrap();
        let selector = CosineSelector::new(Arc::new(embed_all(&embedder, &corpus)));
        let kept = top_n.min(corpus.len() - 1);
        let candidates = select(&corpus, &selector, top_n).unwrap();
        prop_assert_eq!(candidates.queries.len(), corpus.len());
        for qc in &candidates.queries {
            prop_assert_eq!(qc.candidates.len(), kept);
            let distinct: HashSet<&String> = qc.candidates.iter().collect();
            prop_assert_eq!(distinct.len(), kept);
            prop_assert!(!distinct.contains(&qc.query));
        }
        let scorer = planted_scorer(&corpus, 0.2, seed).unwrap();
        let ranking = refine(&corpus, &candidates, &scorer, TieBreak::Id).unwrap();
        prop_assert_eq!(scorer.calls(), (corpus.len() * kept) as u64);
        for (qc, qr) in candidates.queries.iter().zip(&ranking.queries) {
            let mut a: Vec<&String> = qc.candidates.iter().collect();
            let mut b: Vec<&String> = qr.ranked.iter().map(|c| &c.id).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
            for w in qr.ranked.windows(2) {
                prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].id < w[1].id));
            }
        }
    }

    #[test]
    fn run_budget_is_queries_times_top_n(groups in 2usize..6, members in 2usize..5, seed in any::<u64>(), top_n in 10usize..30) {
        let corpus = planted_corpus(groups, members, seed);
        let scorer = LexicalScorer::new(IdfTable::fit(&corpus)).with_cache(&corpus);
        let config = RunConfig { top_n, ..RunConfig::default() };
        let out = run(&corpus, &RandomSelector::new(seed), &scorer, &config).unwrap();
        prop_assert_eq!(out.effective_top_n, top_n.min(corpus.len() - 1));
        prop_assert_eq!(out.scorer_calls, (corpus.len() * out.effective_top_n) as u64);
        prop_assert_eq!(out.warnings.is_empty(), top_n < corpus.len());
    }

    #[test]
    fn split_partitions_the_corpus(groups in 1usize..10, members in 1usize..6, seed in any::<u64>(), fraction in 0.05f64..0.95) {
        let corpus = planted_corpus(groups, members, seed);
        prop_assume!(corpus.len() >= 2);
        let (train, eval) = split(&corpus, fraction, seed).unwrap();
        prop_assert_eq!(eval.len(), eval_size(corpus.len(), fraction));
        prop_assert_eq!(train.len() + eval.len(), corpus.len());
        let mut ids: Vec<&str> = train.records().iter().chain(eval.records()).map(|r| r.id.as_str()).collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), corpus.len());
        let (_, again) = split(&corpus, fraction, seed).unwrap();
        prop_assert_eq!(again.records(), eval.records());
    }

    #[test]
    fn pair_stream_matches_trope_structure(groups in 1usize..8, members in 1usize..6, seed in any::<u64>()) {
        let corpus = planted_corpus(groups, members, seed);
        let expected_pos = stats(&corpus).n_is_similar_pairs;
        let trope = |id: &str| corpus.get(id).unwrap().trope.clone();
        let positives: Vec<_> = generate_pairs(&corpus, false, seed).unwrap().collect();
        prop_assert_eq!(positives.len() as u64, expected_pos);
        prop_assert!(positives.iter().all(|p| p.label == PairLabel::IsSimilar && trope(&p.a_id) == trope(&p.b_id)));
        if groups >= 2 {
            let all: Vec<_> = generate_pairs(&corpus, true, seed).unwrap().collect();
            let negatives: Vec<_> = all.iter().filter(|p| p.label == PairLabel::NotSimilar).collect();
            prop_assert_eq!(negatives.len() as u64, expected_pos);
            prop_assert!(negatives.iter().all(|p| trope(&p.a_id) != trope(&p.b_id)));
        }
    }
}
