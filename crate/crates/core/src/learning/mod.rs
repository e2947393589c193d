//! Maximum-likelihood training with nuclear-norm regularization.
//!
//! The objective is the conditional negative log-likelihood summed over all
//! (image, gold tuple) pairs, plus `c1 * sum_t ||W_t||_* + c2 * sum_t ||Z_t||_*`.
//! It is minimized by forward-backward splitting: a full-batch gradient step
//! followed by singular-value soft thresholding of every parameter matrix.

pub mod nuclear;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::forward_backward;
use crate::model::{binary_tables, effective_rank, unary_table};
use crate::types::{Dataset, EmbeddingSet, ModelParams};

pub use nuclear::{nuclear_norm, prox_nuclear, singular_values};

/// Relative tolerance used for effective ranks in the training log.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-8;

/// Images per parallel work unit. Partial sums are reduced in chunk order,
/// so results do not depend on the thread count.
const CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepSchedule {
    Constant,
    InverseSqrt,
}

impl std::str::FromStr for StepSchedule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "constant" => Ok(StepSchedule::Constant),
            "inverse-sqrt" => Ok(StepSchedule::InverseSqrt),
            other => Err(format!("unknown schedule {other:?} (constant | inverse-sqrt)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Nuclear-norm weight on unary matrices.
    pub c1: f64,
    /// Nuclear-norm weight on binary matrices.
    pub c2: f64,
    pub base_step: f64,
    pub max_iter: usize,
    pub step_schedule: StepSchedule,
    pub seed: u64,
    /// Stop once the relative objective change drops below this.
    pub tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c1: 0.1,
            c2: 0.1,
            base_step: 0.01,
            max_iter: 200,
            step_schedule: StepSchedule::InverseSqrt,
            seed: 0,
            tolerance: 1e-9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("train config: {what}")));
        if !(self.c1.is_finite() && self.c1 >= 0.0) {
            return bad("c1 must be finite and >= 0");
        }
        if !(self.c2.is_finite() && self.c2 >= 0.0) {
            return bad("c2 must be finite and >= 0");
        }
        if !(self.base_step.is_finite() && self.base_step > 0.0) {
            return bad("base_step must be finite and > 0");
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return bad("tolerance must be finite and >= 0");
        }
        Ok(())
    }

    /// Step size at iteration `t` (1-based).
    pub fn step(&self, t: usize) -> f64 {
        match self.step_schedule {
            StepSchedule::Constant => self.base_step,
            StepSchedule::InverseSqrt => self.base_step / (t as f64).sqrt(),
        }
    }
}

/// Gradient of the loss with respect to every `W_t` and `Z_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub unary: Vec<DMatrix<f64>>,
    pub binary: Vec<DMatrix<f64>>,
}

impl GradientSet {
    pub fn matrices(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        self.unary.iter().chain(&self.binary)
    }

    pub fn norm(&self) -> f64 {
        self.matrices().map(|m| m.norm_squared()).sum::<f64>().sqrt()
    }
}

/// Per-chunk partial sums. Binary statistics stay in label space and are
/// projected onto the embeddings once at the end.
struct Partial {
    loss: f64,
    unary: Vec<DMatrix<f64>>,
    pair_stats: Vec<DMatrix<f64>>,
}

impl Partial {
    fn zeros(emb: &EmbeddingSet, d: usize) -> Self {
        let dims = emb.dims();
        let labels: Vec<usize> = emb.matrices().iter().map(|m| m.nrows()).collect();
        Partial {
            loss: 0.0,
            unary: dims.iter().map(|&n| DMatrix::zeros(n, d)).collect(),
            pair_stats: labels.windows(2).map(|w| DMatrix::zeros(w[0], w[1])).collect(),
        }
    }

    fn add(&mut self, other: &Partial) {
        self.loss += other.loss;
        for (a, b) in self.unary.iter_mut().zip(&other.unary) {
            *a += b;
        }
        for (a, b) in self.pair_stats.iter_mut().zip(&other.pair_stats) {
            *a += b;
        }
    }
}

fn check_inputs(params: &ModelParams, emb: &EmbeddingSet, dataset: &Dataset) -> Result<()> {
    if dataset.num_pairs() == 0 {
        return Err(Error::EmptyDataset);
    }
    emb.check_spec(&dataset.spec)?;
    params.check_shapes(&emb.dims(), dataset.spec.input_dim())
}

fn loss_and_partials(
    params: &ModelParams,
    emb: &EmbeddingSet,
    dataset: &Dataset,
    with_gradient: bool,
) -> Result<Partial> {
    check_inputs(params, emb, dataset)?;
    let binary = binary_tables(params, emb)?;
    let d = dataset.spec.input_dim();
    let partials: Vec<Result<Partial>> = dataset
        .images
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Partial::zeros(emb, d);
            for img in chunk {
                let x = &img.features;
                let unary = (0..params.unary.len())
                    .map(|t| unary_table(params, emb, x, t))
                    .collect::<Result<Vec<_>>>()?;
                let marg = forward_backward(&unary, &binary);
                let m = img.gold_tuples.len() as f64;
                for y in &img.gold_tuples {
                    let mut s = 0.0;
                    for (u, &l) in unary.iter().zip(y) {
                        s += u[l];
                    }
                    for (t, b) in binary.iter().enumerate() {
                        s += b[(y[t], y[t + 1])];
                    }
                    acc.loss += marg.log_partition - s;
                }
                if !with_gradient {
                    continue;
                }
                for (t, v) in emb.matrices().iter().enumerate() {
                    // residual over labels: expected minus observed counts
                    let mut r: DVector<f64> = &marg.unary[t] * m;
                    for y in &img.gold_tuples {
                        r[y[t]] -= 1.0;
                    }
                    let g = v.transpose() * r;
                    acc.unary[t].ger(1.0, &g, x, 1.0);
                }
                for (t, stats) in acc.pair_stats.iter_mut().enumerate() {
                    *stats += &marg.pairwise[t] * m;
                    for y in &img.gold_tuples {
                        stats[(y[t], y[t + 1])] -= 1.0;
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = Partial::zeros(emb, d);
    for p in partials {
        total.add(&p?);
    }
    Ok(total)
}

fn finish_gradient(emb: &EmbeddingSet, partial: Partial) -> GradientSet {
    let binary = partial
        .pair_stats
        .iter()
        .enumerate()
        .map(|(t, s)| emb.matrix(t).transpose() * s * emb.matrix(t + 1))
        .collect();
    GradientSet {
        unary: partial.unary,
        binary,
    }
}

/// Negative log-likelihood summed over every (image, gold tuple) pair.
pub fn nll_loss(params: &ModelParams, emb: &EmbeddingSet, dataset: &Dataset) -> Result<f64> {
    Ok(loss_and_partials(params, emb, dataset, false)?.loss)
}

/// Expected minus observed sufficient statistics, projected onto the
/// embeddings: `dW_t = sum (E[v_{y_t}] - v_{y*_t}) x^T` and
/// `dZ_t = sum (E[v_{y_t} v_{y_{t+1}}^T] - v_{y*_t} v_{y*_{t+1}}^T)`.
pub fn nll_gradient(params: &ModelParams, emb: &EmbeddingSet, dataset: &Dataset) -> Result<GradientSet> {
    let partial = loss_and_partials(params, emb, dataset, true)?;
    Ok(finish_gradient(emb, partial))
}

pub fn nll_loss_and_gradient(
    params: &ModelParams,
    emb: &EmbeddingSet,
    dataset: &Dataset,
) -> Result<(f64, GradientSet)> {
    let partial = loss_and_partials(params, emb, dataset, true)?;
    let loss = partial.loss;
    Ok((loss, finish_gradient(emb, partial)))
}

/// Weighted nuclear-norm penalty `c1 sum ||W_t||_* + c2 sum ||Z_t||_*`.
pub fn regularizer(params: &ModelParams, c1: f64, c2: f64) -> f64 {
    let w: f64 = params.unary.iter().map(nuclear_norm).sum();
    let z: f64 = params.binary.iter().map(nuclear_norm).sum();
    c1 * w + c2 * z
}

pub fn objective(params: &ModelParams, emb: &EmbeddingSet, dataset: &Dataset, config: &TrainConfig) -> Result<f64> {
    Ok(nll_loss(params, emb, dataset)? + regularizer(params, config.c1, config.c2))
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub loss: f64,
    /// Unweighted sum of nuclear norms over all matrices.
    pub nuclear_sum: f64,
    /// Effective rank of each matrix, `W[0]..` then `Z[0]..`.
    pub ranks: Vec<usize>,
}

impl IterationRecord {
    fn measure(iteration: usize, loss: f64, params: &ModelParams, config: &TrainConfig) -> Self {
        let mut nuclear_sum = 0.0;
        let mut weighted = 0.0;
        let mut ranks = Vec::new();
        for (i, m) in params.matrices().enumerate() {
            let sv = singular_values(m);
            let norm: f64 = sv.iter().sum();
            nuclear_sum += norm;
            weighted += norm * if i < params.unary.len() { config.c1 } else { config.c2 };
            ranks.push(effective_rank(&sv, DEFAULT_RANK_TOLERANCE));
        }
        IterationRecord {
            iteration,
            objective: loss + weighted,
            loss,
            nuclear_sum,
            ranks,
        }
    }

    /// Tab-separated log line: iteration, objective, loss, nuclear sum, ranks.
    pub fn to_line(&self) -> String {
        let ranks: Vec<String> = self.ranks.iter().map(|r| r.to_string()).collect();
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.iteration,
            self.objective,
            self.loss,
            self.nuclear_sum,
            ranks.join(",")
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Record 0 describes the all-zero starting point.
    pub log: Vec<IterationRecord>,
}

impl TrainOutcome {
    pub fn objectives(&self) -> Vec<f64> {
        self.log.iter().map(|r| r.objective).collect()
    }
}

/// Forward-backward splitting from all-zero parameters.
///
/// Each iteration takes a full-batch gradient step of size `nu_t`, then
/// soft-thresholds the singular values of every `W_t` by `nu_t * c1` and of
/// every `Z_t` by `nu_t * c2`.
pub fn fobos_train(dataset: &Dataset, emb: &EmbeddingSet, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let mut params = ModelParams::zeros_like(&dataset.spec, emb);
    let (mut loss, mut grad) = nll_loss_and_gradient(&params, emb, dataset)?;
    let mut log = vec![IterationRecord::measure(0, loss, &params, config)];

    for t in 1..=config.max_iter {
        let step = config.step(t);
        for (w, g) in params.unary.iter_mut().zip(&grad.unary) {
            let moved = &*w - g * step;
            *w = prox_nuclear(&moved, step * config.c1);
        }
        for (z, g) in params.binary.iter_mut().zip(&grad.binary) {
            let moved = &*z - g * step;
            *z = prox_nuclear(&moved, step * config.c2);
        }
        if !params.is_finite() {
            return Err(Error::NonFiniteObjective { iteration: t });
        }
        (loss, grad) = nll_loss_and_gradient(&params, emb, dataset)?;
        let record = IterationRecord::measure(t, loss, &params, config);
        if !record.objective.is_finite() {
            return Err(Error::NonFiniteObjective { iteration: t });
        }
        let prev = log[log.len() - 1].objective;
        let change = (record.objective - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
        log.push(record);
        if change < config.tolerance {
            break;
        }
    }
    Ok(TrainOutcome { params, log })
}
