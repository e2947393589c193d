//! Bilinear potentials.
//!
//! Unary potential of label `l` at position `t`: `v_l^T W_t x`.
//! Binary potential of labels `(l, l')` at pair `t`: `v_l^T Z_t v_l'`.
//! The same embedding rows serve both kinds of potential. Before inference
//! both are materialized into dense per-label tables ([`PotentialTables`]).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::nuclear::singular_values;
use crate::types::{ChainSpec, EmbeddingSet, ModelParams};

/// Dense per-instance score tables: `unary[t][l]` and `binary[t][(l, l')]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialTables {
    pub unary: Vec<DVector<f64>>,
    pub binary: Vec<DMatrix<f64>>,
}

impl PotentialTables {
    /// Checks that the tables describe a chain and are finite.
    pub fn new(unary: Vec<DVector<f64>>, binary: Vec<DMatrix<f64>>) -> Result<Self> {
        if unary.is_empty() {
            return Err(Error::InvalidArgument("no positions".into()));
        }
        if binary.len() + 1 != unary.len() {
            return Err(Error::dims("binary table count", unary.len() - 1, binary.len()));
        }
        for (t, b) in binary.iter().enumerate() {
            let exp = (unary[t].len(), unary[t + 1].len());
            if b.shape() != exp {
                return Err(Error::dims(
                    format!("binary table {t}"),
                    format!("{}x{}", exp.0, exp.1),
                    format!("{}x{}", b.nrows(), b.ncols()),
                ));
            }
        }
        if unary.iter().any(|u| u.is_empty()) {
            return Err(Error::InvalidArgument("empty label space".into()));
        }
        let finite = unary.iter().all(|u| u.iter().all(|v| v.is_finite()))
            && binary.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidArgument("non-finite potential".into()));
        }
        Ok(PotentialTables { unary, binary })
    }

    /// Tables for input `x`, shared by every position.
    pub fn build(params: &ModelParams, emb: &EmbeddingSet, x: &DVector<f64>) -> Result<Self> {
        let inputs: Vec<&DVector<f64>> = vec![x; params.unary.len()];
        Self::build_per_position(params, emb, &inputs)
    }

    /// Tables where position `t` sees its own input vector `inputs[t]`.
    pub fn build_per_position(params: &ModelParams, emb: &EmbeddingSet, inputs: &[&DVector<f64>]) -> Result<Self> {
        if inputs.len() != params.unary.len() {
            return Err(Error::dims("per-position inputs", params.unary.len(), inputs.len()));
        }
        let unary = inputs
            .iter()
            .enumerate()
            .map(|(t, x)| unary_table(params, emb, x, t))
            .collect::<Result<Vec<_>>>()?;
        let binary = binary_tables(params, emb)?;
        Ok(PotentialTables { unary, binary })
    }

    pub fn len(&self) -> usize {
        self.unary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unary.is_empty()
    }

    pub fn label_counts(&self) -> Vec<usize> {
        self.unary.iter().map(|u| u.len()).collect()
    }

    /// Sum of table entries along `y`. Every reported sequence score in the
    /// crate goes through this function, so equal sequences always get
    /// bit-identical scores.
    pub fn score(&self, y: &[usize]) -> f64 {
        let mut s = 0.0;
        for (u, &l) in self.unary.iter().zip(y) {
            s += u[l];
        }
        for (t, b) in self.binary.iter().enumerate() {
            s += b[(y[t], y[t + 1])];
        }
        s
    }

    pub fn check_labels(&self, y: &[usize]) -> Result<()> {
        if y.len() != self.len() {
            return Err(Error::dims("label sequence length", self.len(), y.len()));
        }
        for (t, (&l, u)) in y.iter().zip(&self.unary).enumerate() {
            if l >= u.len() {
                return Err(Error::LabelOutOfRange {
                    position: t,
                    label: l,
                    size: u.len(),
                });
            }
        }
        Ok(())
    }
}

fn check_position(params: &ModelParams, emb: &EmbeddingSet, t: usize) -> Result<()> {
    if t >= params.unary.len() || t >= emb.len() {
        return Err(Error::InvalidArgument(format!("position {t} out of range")));
    }
    let (v, w) = (emb.matrix(t), &params.unary[t]);
    if v.ncols() != w.nrows() {
        return Err(Error::dims(
            format!("W[{t}] rows vs embedding dim"),
            v.ncols(),
            w.nrows(),
        ));
    }
    Ok(())
}

/// `V_t (W_t x)`: scores of every label at position `t`.
pub fn unary_table(params: &ModelParams, emb: &EmbeddingSet, x: &DVector<f64>, t: usize) -> Result<DVector<f64>> {
    check_position(params, emb, t)?;
    let w = &params.unary[t];
    if x.len() != w.ncols() {
        return Err(Error::dims(format!("input for W[{t}]"), w.ncols(), x.len()));
    }
    let projected = w * x;
    Ok(emb.matrix(t) * projected)
}

/// `V_t Z_t V_{t+1}^T`: scores of every label pair across adjacent pair `t`.
pub fn binary_table(params: &ModelParams, emb: &EmbeddingSet, t: usize) -> Result<DMatrix<f64>> {
    if t >= params.binary.len() || t + 1 >= emb.len() {
        return Err(Error::InvalidArgument(format!("pair index {t} out of range")));
    }
    let z = &params.binary[t];
    let (left, right) = (emb.matrix(t), emb.matrix(t + 1));
    if z.shape() != (left.ncols(), right.ncols()) {
        return Err(Error::dims(
            format!("Z[{t}]"),
            format!("{}x{}", left.ncols(), right.ncols()),
            format!("{}x{}", z.nrows(), z.ncols()),
        ));
    }
    Ok(left * z * right.transpose())
}

pub fn binary_tables(params: &ModelParams, emb: &EmbeddingSet) -> Result<Vec<DMatrix<f64>>> {
    (0..params.binary.len()).map(|t| binary_table(params, emb, t)).collect()
}

/// Model score of sequence `y` for input `x`.
pub fn score(params: &ModelParams, emb: &EmbeddingSet, x: &DVector<f64>, y: &[usize]) -> Result<f64> {
    let tables = PotentialTables::build(params, emb, x)?;
    tables.check_labels(y)?;
    Ok(tables.score(y))
}

/// A trained (or generating) model: label spaces, embeddings and parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: ChainSpec,
    pub embeddings: EmbeddingSet,
    pub params: ModelParams,
}

impl Model {
    pub fn new(spec: ChainSpec, embeddings: EmbeddingSet, params: ModelParams) -> Result<Self> {
        embeddings.check_spec(&spec)?;
        params.check_shapes(&embeddings.dims(), spec.input_dim())?;
        if !params.is_finite() {
            return Err(Error::InvalidArgument("non-finite model parameter".into()));
        }
        Ok(Model {
            spec,
            embeddings,
            params,
        })
    }

    pub fn tables(&self, x: &DVector<f64>) -> Result<PotentialTables> {
        PotentialTables::build(&self.params, &self.embeddings, x)
    }
}

/// Singular spectrum of one parameter matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRank {
    pub name: String,
    pub shape: (usize, usize),
    pub singular_values: Vec<f64>,
    pub effective_rank: usize,
    pub nuclear_norm: f64,
}

/// Number of singular values above `tolerance * sigma_max`.
pub fn effective_rank(singular_values: &[f64], tolerance: f64) -> usize {
    let max = singular_values.iter().cloned().fold(0.0_f64, f64::max);
    singular_values
        .iter()
        .filter(|&&s| s > tolerance * max && s > 0.0)
        .count()
}

/// Singular values and effective rank of every `W_t` then every `Z_t`.
pub fn rank_report(params: &ModelParams, tolerance: f64) -> Vec<MatrixRank> {
    params
        .matrices()
        .zip(params.matrix_names())
        .map(|(m, name)| {
            let sv = singular_values(m);
            MatrixRank {
                name,
                shape: m.shape(),
                effective_rank: effective_rank(&sv, tolerance),
                nuclear_norm: sv.iter().sum(),
                singular_values: sv,
            }
        })
        .collect()
}
