//! Pairwise scorers used by the refine stage.
//!
//! Every scorer maps a (query, candidate) pair of records to a similarity in
//! `[0, 1]` and counts its own invocations.

mod external;
mod head;
mod lexical;

use std::sync::atomic::{AtomicU64, Ordering};

pub use external::{ExternalScorer, ExternalScorerConfig};
pub use head::{
    batch_gradient, batch_loss, feature_block, siamese_score, train_head, HeadWeights, SiameseScorer,
    TrainConfig, TrainingMeta,
};
pub use lexical::{lexical_cross_score, IdfTable, LexicalScorer, TokenBag};

use crate::corpus::CharacterRecord;
use crate::error::{Error, Result};

pub trait PairScorer: Send + Sync {
    fn name(&self) -> &str;

    /// Similarity of `candidate` to `query`, in `[0, 1]`. Not required to be
    /// symmetric.
    fn score(&self, query: &CharacterRecord, candidate: &CharacterRecord) -> Result<f64>;

    /// Total number of `score` invocations so far.
    fn calls(&self) -> u64;
}

#[derive(Debug, Default)]
pub struct CallCounter(AtomicU64);

impl CallCounter {
    pub fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Returns the same score for every pair.
#[derive(Debug)]
pub struct ConstantScorer {
    value: f64,
    calls: CallCounter,
}

impl ConstantScorer {
    pub fn new(value: f64) -> Result<Self> {
        check_unit(value, "constant score")?;
        Ok(ConstantScorer {
            value,
            calls: CallCounter::default(),
        })
    }
}

impl PairScorer for ConstantScorer {
    fn name(&self) -> &str {
        "constant"
    }

    fn score(&self, _: &CharacterRecord, _: &CharacterRecord) -> Result<f64> {
        self.calls.bump();
        Ok(self.value)
    }

    fn calls(&self) -> u64 {
        self.calls.get()
    }
}

pub(crate) fn check_unit(value: f64, what: &str) -> Result<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::InvalidArgument(format!("{what} {value} outside [0, 1]")))
    }
}

impl<S: PairScorer + ?Sized> PairScorer for std::sync::Arc<S> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn score(&self, query: &CharacterRecord, candidate: &CharacterRecord) -> Result<f64> {
        (**self).score(query, candidate)
    }

    fn calls(&self) -> u64 {
        (**self).calls()
    }
}
