//! Low-rank bilinear chain CRFs with output label embeddings.
//!
//! A tuple `y = (y_1, .., y_T)` is scored against an input vector `x` by
//! `sum_t v_{y_t}^T W_t x + sum_t v_{y_t}^T Z_t v_{y_{t+1}}`, where `v_l` is a
//! fixed embedding of label `l`. Training minimizes the conditional negative
//! log-likelihood plus nuclear-norm penalties on every `W_t` and `Z_t` using
//! forward-backward splitting, which drives the parameter matrices toward
//! low rank.
//!
//! The crate is organized by pipeline stage:
//!
//! * [`types`]: vocabularies, chain layout, datasets, embeddings, parameters
//! * [`model`]: potential tables and scoring
//! * [`inference`]: log-partition, marginals, Viterbi, k-best, enumeration
//! * [`learning`]: loss, gradient, nuclear-norm prox, training loop
//! * [`embeddings`]: indicator, semantic-equivalence and external vectors
//! * [`evaluation`]: top-k prediction, per-type precision, model combination
//! * [`io`]: file formats
//! * [`synth`]: synthetic problems with a known generating model
//! * [`cli`]: the `tuplecrf` command-line front end

pub mod cli;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod io;
pub mod learning;
pub mod model;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use model::{Model, PotentialTables};
pub use types::{AnnotatedImage, ChainSpec, Dataset, EmbeddingSet, EmbeddingSource, Labels, ModelParams, Vocabulary};
