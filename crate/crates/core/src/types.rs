//! Domain types shared by every stage of the pipeline: label vocabularies,
//! the chain layout, annotated images, label embeddings and model parameters.
//!
//! Everything here is immutable once constructed. Constructors validate
//! their invariants so downstream code can index without re-checking.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Argument types of the semantic tuple task, in chain order.
pub const TUPLE_ARGUMENT_TYPES: [&str; 3] = ["locative", "predicate", "actor"];

/// A label sequence, one label id per chain position.
pub type Labels = Vec<usize>;

/// Dense token <-> id mapping for one argument type.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    argument_type: String,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    argument_type: String,
    tokens: Vec<String>,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;

    fn try_from(repr: VocabularyRepr) -> Result<Self> {
        Vocabulary::new(repr.argument_type, repr.tokens)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            argument_type: v.argument_type,
            tokens: v.tokens,
        }
    }
}

impl Vocabulary {
    /// Ids are assigned in the order given. Duplicate tokens are rejected.
    pub fn new(argument_type: impl Into<String>, tokens: Vec<String>) -> Result<Self> {
        let argument_type = argument_type.into();
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, token) in tokens.iter().enumerate() {
            if index.insert(token.clone(), id).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate token {token:?} in {argument_type} vocabulary"
                )));
            }
        }
        Ok(Vocabulary {
            argument_type,
            tokens,
            index,
        })
    }

    pub fn argument_type(&self) -> &str {
        &self.argument_type
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}

/// Builds a vocabulary of the `max_size` most frequent tokens.
///
/// Tokens are ordered by descending frequency with ties broken
/// lexicographically; ids follow that order.
pub fn build_vocabulary<S: AsRef<str>>(argument_type: &str, corpus: &[Vec<S>], max_size: usize) -> Result<Vocabulary> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for token in corpus.iter().flatten() {
        *counts.entry(token.as_ref()).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size);
    Vocabulary::new(argument_type, ranked.into_iter().map(|(t, _)| t.to_owned()).collect())
}

/// Shape of a chain model: one vocabulary per position plus the input
/// feature dimension.
///
/// Embedding dimensions are owned by [`EmbeddingSet`], since the same label
/// spaces are shared by models with different output representations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSpec {
    positions: Vec<Vocabulary>,
    input_dim: usize,
}

impl ChainSpec {
    pub fn new(positions: Vec<Vocabulary>, input_dim: usize) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidArgument("chain needs at least one position".into()));
        }
        if input_dim == 0 {
            return Err(Error::InvalidArgument("input dimension must be at least 1".into()));
        }
        if let Some(v) = positions.iter().find(|v| v.is_empty()) {
            return Err(Error::InvalidArgument(format!(
                "vocabulary for {} is empty",
                v.argument_type()
            )));
        }
        Ok(ChainSpec { positions, input_dim })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn vocabulary(&self, t: usize) -> &Vocabulary {
        &self.positions[t]
    }

    pub fn vocabularies(&self) -> &[Vocabulary] {
        &self.positions
    }

    /// Label-space sizes |L_t| in chain order.
    pub fn label_counts(&self) -> Vec<usize> {
        self.positions.iter().map(Vocabulary::len).collect()
    }

    pub fn argument_types(&self) -> Vec<&str> {
        self.positions.iter().map(Vocabulary::argument_type).collect()
    }

    pub fn position_of(&self, argument_type: &str) -> Option<usize> {
        self.positions.iter().position(|v| v.argument_type() == argument_type)
    }

    pub fn check_labels(&self, labels: &[usize]) -> Result<()> {
        if labels.len() != self.len() {
            return Err(Error::dims("label sequence length", self.len(), labels.len()));
        }
        for (t, &label) in labels.iter().enumerate() {
            let size = self.positions[t].len();
            if label >= size {
                return Err(Error::LabelOutOfRange {
                    position: t,
                    label,
                    size,
                });
            }
        }
        Ok(())
    }

    /// Token strings for a label sequence. Panics on out-of-range ids.
    pub fn decode(&self, labels: &[usize]) -> Vec<String> {
        labels
            .iter()
            .zip(&self.positions)
            .map(|(&l, v)| v.tokens[l].clone())
            .collect()
    }
}

/// An image with its input features and the set of gold tuples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub features: DVector<f64>,
    pub gold_tuples: BTreeSet<Labels>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub spec: ChainSpec,
    pub images: Vec<AnnotatedImage>,
}

/// One invariant violation found by [`validate_dataset`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub image_id: String,
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.image_id, self.field, self.message)
    }
}

impl Dataset {
    /// Validating constructor; fails with the first violation.
    pub fn new(spec: ChainSpec, images: Vec<AnnotatedImage>) -> Result<Self> {
        let dataset = Dataset { spec, images };
        if let Some(v) = validate_dataset(&dataset).into_iter().next() {
            return Err(Error::InvalidArgument(v.to_string()));
        }
        Ok(dataset)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Every (features, gold tuple) training pair, in image order.
    pub fn pairs(&self) -> impl Iterator<Item = (&DVector<f64>, &Labels)> {
        self.images
            .iter()
            .flat_map(|img| img.gold_tuples.iter().map(move |y| (&img.features, y)))
    }

    pub fn num_pairs(&self) -> usize {
        self.images.iter().map(|i| i.gold_tuples.len()).sum()
    }
}

/// Checks every image against the dataset's chain spec.
pub fn validate_dataset(dataset: &Dataset) -> Vec<Violation> {
    let spec = &dataset.spec;
    let mut report = Vec::new();
    for img in &dataset.images {
        let mut push = |field, message: String| {
            report.push(Violation {
                image_id: img.image_id.clone(),
                field,
                message,
            })
        };
        if img.features.len() != spec.input_dim() {
            push(
                "features",
                format!(
                    "length {} does not match input dimension {}",
                    img.features.len(),
                    spec.input_dim()
                ),
            );
        }
        if img.features.iter().any(|v| !v.is_finite()) {
            push("features", "non-finite entry".to_string());
        }
        for tuple in &img.gold_tuples {
            if tuple.len() != spec.len() {
                push(
                    "gold_tuples",
                    format!("tuple {:?} has length {}, expected {}", tuple, tuple.len(), spec.len()),
                );
                continue;
            }
            for (t, &label) in tuple.iter().enumerate() {
                let size = spec.vocabulary(t).len();
                if label >= size {
                    push(
                        "gold_tuples",
                        format!("label {label} out of range at position {t} (size {size})"),
                    );
                }
            }
        }
    }
    report
}

/// Where a position's label embedding came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Indicator,
    Ser,
    External,
}

impl fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingSource::Indicator => "indicator",
            EmbeddingSource::Ser => "ser",
            EmbeddingSource::External => "external",
        })
    }
}

/// Per-position label embedding matrices; row `l` of `matrix(t)` is `v_l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    matrices: Vec<DMatrix<f64>>,
    sources: Vec<EmbeddingSource>,
}

impl EmbeddingSet {
    pub fn new(matrices: Vec<DMatrix<f64>>, sources: Vec<EmbeddingSource>) -> Result<Self> {
        if matrices.len() != sources.len() {
            return Err(Error::dims("embedding sources", matrices.len(), sources.len()));
        }
        for (t, (m, src)) in matrices.iter().zip(&sources).enumerate() {
            if m.ncols() == 0 {
                return Err(Error::InvalidArgument(format!(
                    "embedding dimension at position {t} must be at least 1"
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "non-finite embedding entry at position {t}"
                )));
            }
            if *src == EmbeddingSource::Indicator && *m != DMatrix::identity(m.nrows(), m.nrows()) {
                return Err(Error::InvalidArgument(format!(
                    "indicator embedding at position {t} is not an identity matrix"
                )));
            }
        }
        Ok(EmbeddingSet { matrices, sources })
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn matrix(&self, t: usize) -> &DMatrix<f64> {
        &self.matrices[t]
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn source(&self, t: usize) -> EmbeddingSource {
        self.sources[t]
    }

    pub fn sources(&self) -> &[EmbeddingSource] {
        &self.sources
    }

    /// Embedding dimensions n_t.
    pub fn dims(&self) -> Vec<usize> {
        self.matrices.iter().map(|m| m.ncols()).collect()
    }

    /// Checks one row per label at every position.
    pub fn check_spec(&self, spec: &ChainSpec) -> Result<()> {
        if self.len() != spec.len() {
            return Err(Error::dims("embedding positions", spec.len(), self.len()));
        }
        for (t, m) in self.matrices.iter().enumerate() {
            let labels = spec.vocabulary(t).len();
            if m.nrows() != labels {
                return Err(Error::dims(
                    format!("embedding rows at position {t}"),
                    labels,
                    m.nrows(),
                ));
            }
        }
        Ok(())
    }
}

/// Unary matrices `W_t` (n_t x d) and binary matrices `Z_t` (n_t x n_{t+1}).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub unary: Vec<DMatrix<f64>>,
    pub binary: Vec<DMatrix<f64>>,
}

impl ModelParams {
    pub fn zeros(emb_dims: &[usize], input_dim: usize) -> Self {
        ModelParams {
            unary: emb_dims.iter().map(|&n| DMatrix::zeros(n, input_dim)).collect(),
            binary: emb_dims.windows(2).map(|w| DMatrix::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn zeros_like(spec: &ChainSpec, emb: &EmbeddingSet) -> Self {
        Self::zeros(&emb.dims(), spec.input_dim())
    }

    /// Verifies shapes against the embedding dims and input dimension.
    pub fn check_shapes(&self, emb_dims: &[usize], input_dim: usize) -> Result<()> {
        let shape_err = |name: String, exp: (usize, usize), got: (usize, usize)| Error::Shape {
            matrix: name,
            expected: format!("{}x{}", exp.0, exp.1),
            actual: format!("{}x{}", got.0, got.1),
        };
        if self.unary.len() != emb_dims.len() {
            return Err(Error::dims("unary matrix count", emb_dims.len(), self.unary.len()));
        }
        if self.binary.len() + 1 != emb_dims.len() {
            return Err(Error::dims(
                "binary matrix count",
                emb_dims.len() - 1,
                self.binary.len(),
            ));
        }
        for (t, w) in self.unary.iter().enumerate() {
            let exp = (emb_dims[t], input_dim);
            if w.shape() != exp {
                return Err(shape_err(format!("W[{t}]"), exp, w.shape()));
            }
        }
        for (t, z) in self.binary.iter().enumerate() {
            let exp = (emb_dims[t], emb_dims[t + 1]);
            if z.shape() != exp {
                return Err(shape_err(format!("Z[{t}]"), exp, z.shape()));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().all(|m| m.iter().all(|v| v.is_finite()))
    }

    pub fn matrices(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        self.unary.iter().chain(&self.binary)
    }

    /// Display names in `matrices()` order: `W[0]..`, then `Z[0]..`.
    pub fn matrix_names(&self) -> Vec<String> {
        (0..self.unary.len())
            .map(|t| format!("W[{t}]"))
            .chain((0..self.binary.len()).map(|t| format!("Z[{t}]")))
            .collect()
    }
}
