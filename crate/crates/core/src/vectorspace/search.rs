use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::embeddings::{EmbeddingSet, Vector};
use crate::error::{Error, Result};

/// `u·v / (‖u‖‖v‖)`, or 0 when either norm is zero.
pub fn cosine(u: &Vector, v: &Vector) -> Result<f64> {
    if u.dimension() != v.dimension() {
        return Err(Error::InvalidArgument(format!(
            "cosine of vectors with dimensions {} and {}",
            u.dimension(),
            v.dimension()
        )));
    }
    let (a, b) = (u.values(), v.values());
    Ok(cosine_with_norms(a, b, norm(a), norm(b)))
}

pub fn cosine_slices(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    cosine_with_norms(a, b, norm(a), norm(b))
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn cosine_with_norms(a: &[f64], b: &[f64], norm_a: f64, norm_b: f64) -> f64 {
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let c = (dot / (norm_a * norm_b)).clamp(-1.0, 1.0);
    // -0.0 would sort below 0.0 under total_cmp
    if c == 0.0 {
        0.0
    } else {
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub cosine: f64,
}

/// Nearest neighbors of one query, by cosine descending then id ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborList {
    pub query: String,
    pub neighbors: Vec<Neighbor>,
}

/// Exact top-`min(n, |set| - 1)` neighbors of `query_id`, self excluded.
pub fn top_n_neighbors(query_id: &str, embeddings: &EmbeddingSet, n: usize) -> Result<NeighborList> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let query = embeddings
        .position(query_id)
        .ok_or_else(|| Error::UnknownId(query_id.to_string()))?;
    let neighbors = nearest_positions(embeddings, query, n)
        .into_iter()
        .map(|(pos, cosine)| Neighbor {
            id: embeddings.ids()[pos].clone(),
            cosine,
        })
        .collect();
    Ok(NeighborList {
        query: query_id.to_string(),
        neighbors,
    })
}

/// Brute-force scan over the set returning `(position, cosine)` pairs.
pub(crate) fn nearest_positions(embeddings: &EmbeddingSet, query: usize, n: usize) -> Vec<(usize, f64)> {
    let q = embeddings.row(query);
    let qn = embeddings.norm(query);
    let mut scored: Vec<(usize, f64)> = (0..embeddings.len())
        .filter(|&p| p != query)
        .map(|p| (p, cosine_with_norms(q, embeddings.row(p), qn, embeddings.norm(p))))
        .collect();
    let ids = embeddings.ids();
    let order = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
        b.1.total_cmp(&a.1).then_with(|| ids[a.0].cmp(&ids[b.0]))
    };
    if n < scored.len() {
        scored.select_nth_unstable_by(n, order);
        scored.truncate(n);
    }
    scored.sort_unstable_by(order);
    scored
}
