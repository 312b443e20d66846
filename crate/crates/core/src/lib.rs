//! Two-stage similarity search over theme-labeled text corpora.
//!
//! Candidates for every query are first *selected* with a cheap method
//! (cosine over cached embeddings, or a light head over cached embeddings),
//! then *refined* by an expensive pairwise scorer restricted to those
//! candidates. Ranking metrics, an oracle-overlap harness and a candidate
//! budget sweep measure how well the two stages work together.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod scorer;
pub mod synth;
pub mod vectorspace;

pub use error::{Error, Result};
