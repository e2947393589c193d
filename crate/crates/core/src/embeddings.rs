//! Output label representations: one-hot indicators, semantic-equivalence
//! vectors built from co-annotated tuples, and pretrained word vectors.

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_word_vectors;
use crate::types::{ChainSpec, Dataset, EmbeddingSet, EmbeddingSource, Labels, Vocabulary};

/// Identity embedding at every position.
pub fn indicator_embeddings(spec: &ChainSpec) -> EmbeddingSet {
    let n = spec.len();
    EmbeddingSet::new(
        spec.label_counts()
            .into_iter()
            .map(|l| DMatrix::identity(l, l))
            .collect(),
        vec![EmbeddingSource::Indicator; n],
    )
    .expect("identity matrices are valid indicator embeddings")
}

/// Symmetric count matrix with zero diagonal: `counts[i][j]` is how often
/// labels `i` and `j` were interchangeable on the same image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CooccurrenceCounts {
    pub argument_type: String,
    size: usize,
    counts: Vec<u64>,
}

impl CooccurrenceCounts {
    pub fn zeros(argument_type: impl Into<String>, size: usize) -> Self {
        CooccurrenceCounts {
            argument_type: argument_type.into(),
            size,
            counts: vec![0; size * size],
        }
    }

    /// Builds from a dense matrix; rejects asymmetric input or a non-zero
    /// diagonal.
    pub fn from_rows(argument_type: impl Into<String>, rows: &[Vec<u64>]) -> Result<Self> {
        let size = rows.len();
        let mut c = Self::zeros(argument_type, size);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != size {
                return Err(Error::dims(format!("count row {i}"), size, row.len()));
            }
            for (j, &v) in row.iter().enumerate() {
                c.counts[i * size + j] = v;
            }
        }
        for i in 0..size {
            if c.get(i, i) != 0 {
                return Err(Error::InvalidArgument(format!("non-zero diagonal at {i}")));
            }
            for j in 0..i {
                if c.get(i, j) != c.get(j, i) {
                    return Err(Error::InvalidArgument(format!("counts not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(c)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.size + j]
    }

    fn bump(&mut self, i: usize, j: usize) {
        self.counts[i * self.size + j] += 1;
        self.counts[j * self.size + i] += 1;
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.size..(i + 1) * self.size].iter().sum()
    }

    /// Element-wise sum; used to merge counts sharded by image.
    pub fn merge(&mut self, other: &CooccurrenceCounts) -> Result<()> {
        if other.size != self.size {
            return Err(Error::dims("count matrix size", self.size, other.size));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Counts interchangeable labels at position `t` over groups of tuples that
/// annotate the same image.
///
/// For every unordered pair of distinct tuples in a group that agree on all
/// positions except `t`, the two labels at `t` get one count each way.
pub fn count_tuple_groups<'a, I>(groups: I, argument_type: &str, size: usize, t: usize) -> CooccurrenceCounts
where
    I: IntoIterator<Item = &'a BTreeSet<Labels>>,
{
    let mut counts = CooccurrenceCounts::zeros(argument_type, size);
    for group in groups {
        let tuples: Vec<&Labels> = group.iter().collect();
        for (a, ya) in tuples.iter().enumerate() {
            for yb in &tuples[a + 1..] {
                if ya[t] == yb[t] {
                    continue;
                }
                let same_rest = ya.iter().zip(yb.iter()).enumerate().all(|(s, (p, q))| s == t || p == q);
                if same_rest {
                    counts.bump(ya[t], yb[t]);
                }
            }
        }
    }
    counts
}

pub fn count_equivalences(dataset: &Dataset, t: usize) -> CooccurrenceCounts {
    let vocab = dataset.spec.vocabulary(t);
    count_tuple_groups(
        dataset.images.iter().map(|img| &img.gold_tuples),
        vocab.argument_type(),
        vocab.len(),
        t,
    )
}

/// Row-normalized counts; an all-zero row falls back to the indicator row.
pub fn ser_embeddings(counts: &CooccurrenceCounts) -> DMatrix<f64> {
    let n = counts.size();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let total = counts.row_sum(i);
        if total == 0 {
            m[(i, i)] = 1.0;
            continue;
        }
        for j in 0..n {
            m[(i, j)] = counts.get(i, j) as f64 / total as f64;
        }
    }
    m
}

/// SER matrices for every position of a dataset.
pub fn ser_embedding_set(dataset: &Dataset) -> EmbeddingSet {
    let n = dataset.spec.len();
    EmbeddingSet::new(
        (0..n)
            .map(|t| ser_embeddings(&count_equivalences(dataset, t)))
            .collect(),
        vec![EmbeddingSource::Ser; n],
    )
    .expect("SER rows are finite")
}

/// What to do with vocabulary tokens absent from a vector file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OovPolicy {
    Fail,
    /// Missing tokens get a zero dense part; every row is extended with
    /// `|L|` indicator columns that are one-hot only for missing tokens.
    IndicatorFallback,
}

impl FromStr for OovPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fail" => Ok(OovPolicy::Fail),
            "indicator-fallback" => Ok(OovPolicy::IndicatorFallback),
            other => Err(format!("unknown OOV policy {other:?} (fail | indicator-fallback)")),
        }
    }
}

/// Embedding matrix for `vocab` from a word-vector text file.
///
/// Tokens in the file but not in the vocabulary are ignored.
pub fn load_external_vectors(path: &Path, vocab: &Vocabulary, dim: usize, oov: OovPolicy) -> Result<DMatrix<f64>> {
    let entries = read_word_vectors(path, Some(dim))?;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    for (token, vector) in entries {
        if let Some(id) = vocab.lookup(&token) {
            rows[id] = Some(vector);
        }
    }
    let missing: Vec<String> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_none())
        .map(|(id, _)| vocab.tokens()[id].clone())
        .collect();
    let (width, extend) = match oov {
        OovPolicy::Fail if !missing.is_empty() => return Err(Error::MissingTokens(missing)),
        OovPolicy::Fail => (dim, false),
        OovPolicy::IndicatorFallback => (dim + vocab.len(), true),
    };
    let mut m = DMatrix::zeros(vocab.len(), width);
    for (id, row) in rows.iter().enumerate() {
        match row {
            Some(v) => {
                for (j, &x) in v.iter().enumerate() {
                    m[(id, j)] = x;
                }
            }
            None if extend => m[(id, dim + id)] = 1.0,
            None => unreachable!("missing tokens rejected above"),
        }
    }
    Ok(m)
}
