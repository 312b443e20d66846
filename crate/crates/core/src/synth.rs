//! Planted-structure corpora and a controllable "strong" scorer, for
//! exercising select-and-refine without any trained model.

use std::collections::HashMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{CharacterRecord, Corpus};
use crate::error::{Error, Result};
use crate::scorer::{CallCounter, PairScorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupSize {
    Fixed(usize),
    /// Uniform over `min..=max` per group.
    Range { min: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_groups: usize,
    pub members_per_group: GroupSize,
    pub topic_vocab_size: usize,
    pub shared_vocab_size: usize,
    pub words_per_description: usize,
    pub topic_word_fraction: f64,
    pub scorer_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_groups: 50,
            members_per_group: GroupSize::Fixed(6),
            topic_vocab_size: 40,
            shared_vocab_size: 2000,
            words_per_description: 120,
            topic_word_fraction: 0.3,
            scorer_noise: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_groups == 0 || self.topic_vocab_size == 0 || self.shared_vocab_size == 0 || self.words_per_description == 0 {
            return bad("synthetic corpus counts must be at least 1".into());
        }
        match self.members_per_group {
            GroupSize::Fixed(0) => return bad("members per group must be at least 1".into()),
            GroupSize::Range { min, max } if min == 0 || min > max => {
                return bad(format!("invalid members range {min}..={max}"));
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.topic_word_fraction) {
            return bad(format!("topic word fraction {} outside [0, 1]", self.topic_word_fraction));
        }
        if !(self.scorer_noise >= 0.0 && self.scorer_noise.is_finite()) {
            return bad(format!("scorer noise must be >= 0, got {}", self.scorer_noise));
        }
        Ok(())
    }
}

pub fn record_id(group: usize, member: usize) -> String {
    format!("g{group:04}m{member:03}")
}

pub fn group_label(group: usize) -> String {
    format!("group{group:04}")
}

/// Builds a corpus where each group owns a disjoint topic vocabulary and all
/// groups draw the remaining words from one shared vocabulary.
pub fn generate(cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_topic = (cfg.topic_word_fraction * cfg.words_per_description as f64).round() as usize;
    let mut records = Vec::new();
    for g in 0..cfg.n_groups {
        let size = match cfg.members_per_group {
            GroupSize::Fixed(n) => n,
            GroupSize::Range { min, max } => rng.random_range(min..=max),
        };
        for m in 0..size {
            let mut words: Vec<String> = (0..cfg.words_per_description)
                .map(|i| {
                    if i < n_topic {
                        format!("t{g}w{}", rng.random_range(0..cfg.topic_vocab_size))
                    } else {
                        format!("s{}", rng.random_range(0..cfg.shared_vocab_size))
                    }
                })
                .collect();
            words.shuffle(&mut rng);
            records.push(CharacterRecord {
                id: record_id(g, m),
                name: format!("Character {g}-{m}"),
                trope: group_label(g),
                description: words.join(" "),
            });
        }
    }
    Corpus::from_records(records)
}

/// Scores `0.9 * [same group] + 0.1 + N(0, sigma)`, clamped to `[0, 1]`.
/// The noise draw depends only on the unordered id pair and the seed.
#[derive(Debug)]
pub struct PlantedScorer {
    group_of: HashMap<String, String>,
    noise: Option<Normal<f64>>,
    seed: u64,
    calls: CallCounter,
}

pub fn planted_scorer(corpus: &Corpus, noise_sigma: f64, seed: u64) -> Result<PlantedScorer> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    Ok(PlantedScorer {
        group_of: corpus
            .records()
            .iter()
            .map(|r| (r.id.clone(), r.trope.clone()))
            .collect(),
        noise: (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).expect("sigma is finite and positive")),
        seed,
        calls: CallCounter::default(),
    })
}

impl PlantedScorer {
    fn pair_noise(&self, a: &str, b: &str) -> f64 {
        let Some(normal) = &self.noise else {
            return 0.0;
        };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mut h = FnvHasher::default();
        h.write_u64(self.seed);
        h.write(lo.as_bytes());
        h.write_u8(0xff);
        h.write(hi.as_bytes());
        normal.sample(&mut ChaCha8Rng::seed_from_u64(h.finish()))
    }

    pub fn pair_score(&self, a: &str, b: &str) -> Result<f64> {
        let group = |id: &str| self.group_of.get(id).ok_or_else(|| Error::UnknownId(id.to_string()));
        let same = if group(a)? == group(b)? { 1.0 } else { 0.0 };
        Ok((0.9 * same + 0.1 + self.pair_noise(a, b)).clamp(0.0, 1.0))
    }
}

impl PairScorer for PlantedScorer {
    fn name(&self) -> &str {
        "planted"
    }

    fn score(&self, query: &CharacterRecord, candidate: &CharacterRecord) -> Result<f64> {
        self.calls.bump();
        self.pair_score(&query.id, &candidate.id)
    }

    fn calls(&self) -> u64 {
        self.calls.get()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{stats, word_count};
    use crate::vectorspace::{cosine, embed_all, fit_embedder, EmbedderKind, EmbedderParams, Vector};

    fn cfg(groups: usize, members: usize, fraction: f64) -> SynthConfig {
        SynthConfig {
            n_groups: groups,
            members_per_group: GroupSize::Fixed(members),
            topic_word_fraction: fraction,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn sizes_and_pairs() {
        let corpus = generate(&cfg(20, 5, 0.3)).unwrap();
        assert_eq!(corpus.len(), 100);
        let s = stats(&corpus);
        assert_eq!(s.n_tropes, 20);
        assert_eq!(s.n_is_similar_pairs, 200);
        assert!(corpus.records().iter().all(|r| word_count(&r.description) == 120));
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig {
            members_per_group: GroupSize::Range { min: 2, max: 7 },
            seed: 42,
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap().records(), generate(&cfg).unwrap().records());
    }

    #[test]
    fn pure_topic_groups_are_orthogonal_under_bow() {
        let corpus = generate(&cfg(4, 3, 1.0)).unwrap();
        let e = fit_embedder(EmbedderKind::Bow, &corpus, &EmbedderParams::default()).unwrap();
        let set = embed_all(&e, &corpus);
        let row = |id: &str| Vector::new(set.get(id).unwrap().to_vec()).unwrap();
        for a in corpus.records() {
            for b in corpus.records() {
                if a.trope != b.trope {
                    assert_eq!(cosine(&row(&a.id), &row(&b.id)).unwrap(), 0.0);
                }
            }
        }
    }

    #[test]
    fn planted_noise_free_values() {
        let corpus = generate(&cfg(3, 2, 0.3)).unwrap();
        let scorer = planted_scorer(&corpus, 0.0, 1).unwrap();
        let r = corpus.records();
        assert_eq!(scorer.score(&r[0], &r[1]).unwrap(), 1.0);
        assert_eq!(scorer.score(&r[0], &r[2]).unwrap(), 0.1);
        assert_eq!(scorer.calls(), 2);
    }

    #[test]
    fn planted_noise_is_symmetric_and_bounded() {
        let corpus = generate(&cfg(5, 4, 0.3)).unwrap();
        let scorer = planted_scorer(&corpus, 0.3, 9).unwrap();
        for a in corpus.records() {
            for b in corpus.records() {
                let ab = scorer.score(a, b).unwrap();
                assert_eq!(ab, scorer.score(b, a).unwrap());
                assert!((0.0..=1.0).contains(&ab));
            }
        }
        let other = planted_scorer(&corpus, 0.3, 10).unwrap();
        let r = corpus.records();
        assert_ne!(scorer.score(&r[0], &r[5]).unwrap(), other.score(&r[0], &r[5]).unwrap());
    }

    #[test]
    fn invalid_configs() {
        assert!(generate(&cfg(0, 3, 0.3)).is_err());
        assert!(generate(&cfg(3, 0, 0.3)).is_err());
        assert!(generate(&cfg(3, 3, 1.5)).is_err());
        let corpus = generate(&cfg(2, 2, 0.3)).unwrap();
        assert!(planted_scorer(&corpus, -1.0, 0).is_err());
    }

    #[test]
    fn json_config_accepts_partial_fields() {
        let cfg: SynthConfig = serde_json::from_str(r#"{"n_groups": 3, "members_per_group": {"min": 2, "max": 4}}"#).unwrap();
        assert_eq!(cfg.n_groups, 3);
        assert_eq!(cfg.members_per_group, GroupSize::Range { min: 2, max: 4 });
        assert_eq!(cfg.words_per_description, 120);
    }
}
