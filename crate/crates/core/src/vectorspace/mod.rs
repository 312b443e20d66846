//! Dense vectors, embedders and exact cosine neighbor search: the substrate
//! for candidate selection.

mod embedder;
mod embeddings;
mod search;

pub use embedder::{fit_embedder, tokenize, Embedder, EmbedderKind, EmbedderParams, Vocabulary};
pub use embeddings::{embed_all, load_embeddings, EmbeddingFormat, EmbeddingSet, Vector};
pub use search::{cosine, cosine_slices, top_n_neighbors, Neighbor, NeighborList};
pub(crate) use search::cosine_with_norms;
