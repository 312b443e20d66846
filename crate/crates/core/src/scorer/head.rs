//! Siamese-style scoring head over cached embeddings.
//!
//! A pair `(a, b)` is represented by the feature block `[e_a ; e_b ; |e_a - e_b|]`
//! and scored by a single logistic unit. Training minimises mean binary
//! cross-entropy with mini-batch gradient descent.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CallCounter, PairScorer};
use crate::corpus::{CharacterRecord, PairExample, PairLabel};
use crate::error::{Error, Result};
use crate::vectorspace::EmbeddingSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Pairs per gradient step; 0 means full batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Scale each embedding to unit length before building features.
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 0.5,
            batch_size: 64,
            seed: 0,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub n_pairs: usize,
    /// Mean loss over all training pairs with the final weights.
    pub final_loss: f64,
    /// Mean loss over all training pairs after each epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    pub dimension: usize,
    pub normalize: bool,
    /// Length `3 * dimension`, laid out as `[e_a ; e_b ; |e_a - e_b|]`.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub meta: TrainingMeta,
}

impl HeadWeights {
    pub fn zeros(dimension: usize, normalize: bool) -> Self {
        HeadWeights {
            dimension,
            normalize,
            weights: vec![0.0; 3 * dimension],
            bias: 0.0,
            meta: TrainingMeta {
                epochs: 0,
                learning_rate: 0.0,
                batch_size: 0,
                seed: 0,
                n_pairs: 0,
                final_loss: std::f64::consts::LN_2,
                loss_history: Vec::new(),
            },
        }
    }

    /// Weights plus bias.
    pub fn parameter_count(&self) -> usize {
        self.weights.len() + 1
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let head: HeadWeights = serde_json::from_str(&text)?;
        if head.weights.len() != 3 * head.dimension || head.dimension == 0 {
            return Err(Error::InvalidArgument(format!(
                "head has {} weights for dimension {}",
                head.weights.len(),
                head.dimension
            )));
        }
        if !head.bias.is_finite() || head.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("head weights must be finite".into()));
        }
        Ok(head)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    fn logit(&self, features: &[f64]) -> f64 {
        dot(&self.weights, features) + self.bias
    }

    /// Score for two raw embedding rows.
    pub fn score_rows(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut features = vec![0.0; 3 * self.dimension];
        feature_block(a, b, self.normalize, &mut features);
        sigmoid(self.logit(&features))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(z)` against `y`, computed without overflow.
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Writes `[a ; b ; |a - b|]` into `out`, optionally unit-normalising `a` and `b`.
pub fn feature_block(a: &[f64], b: &[f64], normalize: bool, out: &mut [f64]) {
    let d = a.len();
    debug_assert_eq!(b.len(), d);
    debug_assert_eq!(out.len(), 3 * d);
    let scale = |v: &[f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if normalize && n > 0.0 {
            1.0 / n
        } else {
            1.0
        }
    };
    let (sa, sb) = (scale(a), scale(b));
    for i in 0..d {
        let (x, y) = (a[i] * sa, b[i] * sb);
        out[i] = x;
        out[d + i] = y;
        out[2 * d + i] = (x - y).abs();
    }
}

/// Mean cross-entropy over a batch of feature rows.
pub fn batch_loss(weights: &[f64], bias: f64, features: &[Vec<f64>], labels: &[f64]) -> f64 {
    let total: f64 = features
        .iter()
        .zip(labels)
        .map(|(x, &y)| bce_with_logit(dot(weights, x) + bias, y))
        .sum();
    total / features.len() as f64
}

/// Analytic gradient of [`batch_loss`] with respect to `(weights, bias)`.
pub fn batch_gradient(weights: &[f64], bias: f64, features: &[Vec<f64>], labels: &[f64]) -> (Vec<f64>, f64) {
    let mut grad = vec![0.0; weights.len()];
    let mut grad_bias = 0.0;
    let scale = 1.0 / features.len() as f64;
    for (x, &y) in features.iter().zip(labels) {
        let residual = (sigmoid(dot(weights, x) + bias) - y) * scale;
        for (g, xi) in grad.iter_mut().zip(x) {
            *g += residual * xi;
        }
        grad_bias += residual;
    }
    (grad, grad_bias)
}

struct ResolvedPair {
    a: usize,
    b: usize,
    y: f64,
}

fn mean_loss(head: &HeadWeights, embeddings: &EmbeddingSet, pairs: &[ResolvedPair], buf: &mut [f64]) -> f64 {
    let total: f64 = pairs
        .iter()
        .map(|p| {
            feature_block(embeddings.row(p.a), embeddings.row(p.b), head.normalize, buf);
            bce_with_logit(head.logit(buf), p.y)
        })
        .sum();
    total / pairs.len() as f64
}

/// Fits the logistic head on labeled pairs. Deterministic for a fixed seed.
pub fn train_head(
    pairs: impl IntoIterator<Item = PairExample>,
    embeddings: &EmbeddingSet,
    config: &TrainConfig,
) -> Result<HeadWeights> {
    let lookup = |id: &str| embeddings.position(id).ok_or_else(|| Error::UnknownId(id.to_string()));
    let mut resolved = Vec::new();
    let (mut n_pos, mut n_neg) = (0usize, 0usize);
    for p in pairs {
        let y = match p.label {
            PairLabel::IsSimilar => {
                n_pos += 1;
                1.0
            }
            PairLabel::NotSimilar => {
                n_neg += 1;
                0.0
            }
        };
        resolved.push(ResolvedPair {
            a: lookup(&p.a_id)?,
            b: lookup(&p.b_id)?,
            y,
        });
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(format!(
            "training needs both labels, got {n_pos} IsSimilar and {n_neg} NotSimilar"
        )));
    }
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {}",
            config.learning_rate
        )));
    }

    let d = embeddings.dimension();
    let mut head = HeadWeights::zeros(d, config.normalize);
    let batch_size = if config.batch_size == 0 {
        resolved.len()
    } else {
        config.batch_size.min(resolved.len())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..resolved.len()).collect();
    let mut features = vec![0.0; 3 * d];
    let mut grad = vec![0.0; 3 * d];
    let mut history = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        if batch_size < resolved.len() {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_bias = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let p = &resolved[i];
                feature_block(embeddings.row(p.a), embeddings.row(p.b), config.normalize, &mut features);
                let residual = (sigmoid(head.logit(&features)) - p.y) * scale;
                for (g, x) in grad.iter_mut().zip(&features) {
                    *g += residual * x;
                }
                grad_bias += residual;
            }
            for (w, g) in head.weights.iter_mut().zip(&grad) {
                *w -= config.learning_rate * g;
            }
            head.bias -= config.learning_rate * grad_bias;
        }
        history.push(mean_loss(&head, embeddings, &resolved, &mut features));
    }

    head.meta = TrainingMeta {
        epochs: config.epochs,
        learning_rate: config.learning_rate,
        batch_size,
        seed: config.seed,
        n_pairs: resolved.len(),
        final_loss: history
            .last()
            .copied()
            .unwrap_or_else(|| mean_loss(&head, embeddings, &resolved, &mut features)),
        loss_history: history,
    };
    Ok(head)
}

/// Probability that `(a, b)` is a similar pair under `head`.
pub fn siamese_score(head: &HeadWeights, embeddings: &EmbeddingSet, a_id: &str, b_id: &str) -> Result<f64> {
    check_dimension(head, embeddings)?;
    let a = embeddings.get(a_id).ok_or_else(|| Error::UnknownId(a_id.to_string()))?;
    let b = embeddings.get(b_id).ok_or_else(|| Error::UnknownId(b_id.to_string()))?;
    Ok(head.score_rows(a, b))
}

fn check_dimension(head: &HeadWeights, embeddings: &EmbeddingSet) -> Result<()> {
    if head.dimension != embeddings.dimension() {
        return Err(Error::DimensionMismatch {
            id: "<head>".into(),
            expected: embeddings.dimension(),
            found: head.dimension,
        });
    }
    Ok(())
}

/// The trained head used as a pairwise scorer, looking records up by id.
#[derive(Debug)]
pub struct SiameseScorer {
    head: Arc<HeadWeights>,
    embeddings: Arc<EmbeddingSet>,
    calls: CallCounter,
}

impl SiameseScorer {
    pub fn new(head: Arc<HeadWeights>, embeddings: Arc<EmbeddingSet>) -> Result<Self> {
        check_dimension(&head, &embeddings)?;
        Ok(SiameseScorer {
            head,
            embeddings,
            calls: CallCounter::default(),
        })
    }

    pub fn head(&self) -> &HeadWeights {
        &self.head
    }

    pub fn embeddings(&self) -> &EmbeddingSet {
        &self.embeddings
    }
}

impl PairScorer for SiameseScorer {
    fn name(&self) -> &str {
        "siamese-head"
    }

    fn score(&self, query: &CharacterRecord, candidate: &CharacterRecord) -> Result<f64> {
        self.calls.bump();
        siamese_score(&self.head, &self.embeddings, &query.id, &candidate.id)
    }

    fn calls(&self) -> u64 {
        self.calls.get()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vectorspace::Vector;
    use rand::Rng;

    /// Items in `groups` groups; the first `groups` coordinates are a one-hot
    /// group indicator, the rest are noise.
    fn indicator_set(groups: usize, per_group: usize, noise_dims: usize, seed: u64) -> (EmbeddingSet, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = EmbeddingSet::new(groups + noise_dims).unwrap();
        let mut group_of = Vec::new();
        for g in 0..groups {
            for m in 0..per_group {
                let mut v = vec![0.0; groups + noise_dims];
                v[g] = 1.0;
                for x in v.iter_mut().skip(groups) {
                    *x = rng.random_range(-0.2..0.2);
                }
                set.insert(format!("g{g}m{m}"), Vector::new(v).unwrap()).unwrap();
                group_of.push(g);
            }
        }
        (set, group_of)
    }

    fn all_pairs(set: &EmbeddingSet, group_of: &[usize]) -> Vec<PairExample> {
        let mut out = Vec::new();
        for i in 0..set.len() {
            for j in i + 1..set.len() {
                out.push(PairExample {
                    a_id: set.ids()[i].clone(),
                    b_id: set.ids()[j].clone(),
                    label: if group_of[i] == group_of[j] {
                        PairLabel::IsSimilar
                    } else {
                        PairLabel::NotSimilar
                    },
                });
            }
        }
        out
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let (set, group_of) = indicator_set(4, 5, 3, 11);
        let pairs = all_pairs(&set, &group_of);
        let groups = 4;

        // independent check: the hand-built hyperplane "absdiff mass over the
        // indicator block below 1" separates the data
        let mut buf = vec![0.0; 3 * set.dimension()];
        for p in &pairs {
            feature_block(set.get(&p.a_id).unwrap(), set.get(&p.b_id).unwrap(), false, &mut buf);
            let d = set.dimension();
            let absdiff: f64 = buf[2 * d..2 * d + groups].iter().sum();
            assert_eq!(absdiff < 1.0, p.label == PairLabel::IsSimilar);
        }

        let config = TrainConfig {
            epochs: 50,
            learning_rate: 0.5,
            batch_size: 16,
            seed: 3,
            normalize: false,
        };
        let head = train_head(pairs.clone(), &set, &config).unwrap();
        let correct = pairs
            .iter()
            .filter(|p| {
                let s = siamese_score(&head, &set, &p.a_id, &p.b_id).unwrap();
                (s > 0.5) == (p.label == PairLabel::IsSimilar)
            })
            .count();
        let accuracy = correct as f64 / pairs.len() as f64;
        assert!(accuracy >= 0.95, "accuracy {accuracy}");
    }

    #[test]
    fn zero_epochs_gives_half() {
        let (set, group_of) = indicator_set(2, 3, 1, 0);
        let config = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let head = train_head(all_pairs(&set, &group_of), &set, &config).unwrap();
        assert!(head.weights.iter().all(|&w| w == 0.0));
        assert_eq!(head.bias, 0.0);
        assert_eq!(head.parameter_count(), 3 * set.dimension() + 1);
        assert_eq!(siamese_score(&head, &set, "g0m0", "g1m2").unwrap(), 0.5);
        assert!((head.meta.final_loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let dim = 6;
            let features: Vec<Vec<f64>> = (0..12)
                .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let labels: Vec<f64> = (0..12).map(|_| rng.random_range(0..2) as f64).collect();
            let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = rng.random_range(-1.0..1.0);
            let (grad, grad_b) = batch_gradient(&w, b, &features, &labels);
            let h = 1e-5;
            let rel = |analytic: f64, numeric: f64| (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            for i in 0..dim {
                let (mut up, mut down) = (w.clone(), w.clone());
                up[i] += h;
                down[i] -= h;
                let numeric = (batch_loss(&up, b, &features, &labels) - batch_loss(&down, b, &features, &labels)) / (2.0 * h);
                assert!(rel(grad[i], numeric) < 1e-4, "coord {i}: {} vs {numeric}", grad[i]);
            }
            let numeric_b = (batch_loss(&w, b + h, &features, &labels) - batch_loss(&w, b - h, &features, &labels)) / (2.0 * h);
            assert!(rel(grad_b, numeric_b) < 1e-4);
        }
    }

    #[test]
    fn full_batch_loss_is_non_increasing() {
        let (set, group_of) = indicator_set(3, 4, 4, 9);
        let config = TrainConfig {
            epochs: 40,
            learning_rate: 0.2,
            batch_size: 0,
            seed: 1,
            normalize: true,
        };
        let head = train_head(all_pairs(&set, &group_of), &set, &config).unwrap();
        for w in head.meta.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "{} -> {}", w[0], w[1]);
        }
        assert!(head.meta.final_loss < std::f64::consts::LN_2);
    }

    #[test]
    fn deterministic_under_seed() {
        let (set, group_of) = indicator_set(3, 4, 2, 2);
        let config = TrainConfig::default();
        let a = train_head(all_pairs(&set, &group_of), &set, &config).unwrap();
        let b = train_head(all_pairs(&set, &group_of), &set, &config).unwrap();
        assert_eq!(a, b);
        assert!(a.weights.iter().zip(&b.weights).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn missing_id_and_single_label_rejected() {
        let (set, _) = indicator_set(2, 2, 0, 0);
        let pairs = vec![PairExample {
            a_id: "g0m0".into(),
            b_id: "ghost".into(),
            label: PairLabel::IsSimilar,
        }];
        assert!(matches!(
            train_head(pairs, &set, &TrainConfig::default()),
            Err(Error::UnknownId(id)) if id == "ghost"
        ));
        let positives_only = vec![PairExample {
            a_id: "g0m0".into(),
            b_id: "g0m1".into(),
            label: PairLabel::IsSimilar,
        }];
        assert!(train_head(positives_only, &set, &TrainConfig::default()).is_err());
        let head = HeadWeights::zeros(2, true);
        assert!(siamese_score(&head, &set, "g0m0", "nope").is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.json");
        let mut head = HeadWeights::zeros(2, false);
        head.weights[4] = -1.25;
        head.save(&path).unwrap();
        assert_eq!(HeadWeights::load(&path).unwrap(), head);
    }
}
