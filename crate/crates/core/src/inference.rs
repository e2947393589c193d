//! Exact inference on a chain: log-partition, marginals, Viterbi and k-best
//! decoding, plus exhaustive enumeration used as a ground-truth oracle.
//!
//! Everything runs in log space. Ties between equal-scoring sequences are
//! broken toward the lexicographically smallest label sequence.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::PotentialTables;
use crate::types::{EmbeddingSet, Labels, ModelParams};

/// Default cap on the number of sequences [`brute_force`] will enumerate.
pub const DEFAULT_ENUMERATION_LIMIT: u128 = 1_000_000;

/// Exact unary and pairwise marginals of the chain distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalSet {
    pub unary: Vec<DVector<f64>>,
    pub pairwise: Vec<DMatrix<f64>>,
    pub log_partition: f64,
}

pub(crate) fn log_sum_exp<I: IntoIterator<Item = f64> + Clone>(values: I) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values.into_iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Forward messages: `alpha[t][l]` is the log-sum of all prefixes ending in
/// `l` at position `t`, including `unary[t][l]`.
fn forward(unary: &[DVector<f64>], binary: &[DMatrix<f64>]) -> Vec<DVector<f64>> {
    let mut alpha = Vec::with_capacity(unary.len());
    alpha.push(unary[0].clone());
    for (t, b) in binary.iter().enumerate() {
        let prev = &alpha[t];
        let next = DVector::from_fn(unary[t + 1].len(), |j, _| {
            unary[t + 1][j] + log_sum_exp((0..prev.len()).map(|i| prev[i] + b[(i, j)]))
        });
        alpha.push(next);
    }
    alpha
}

/// Backward messages: `beta[t][l]` is the log-sum over suffixes after `t`,
/// excluding `unary[t][l]`.
fn backward(unary: &[DVector<f64>], binary: &[DMatrix<f64>]) -> Vec<DVector<f64>> {
    let n = unary.len();
    let mut beta = vec![DVector::zeros(0); n];
    beta[n - 1] = DVector::zeros(unary[n - 1].len());
    for t in (0..n - 1).rev() {
        let b = &binary[t];
        let (next_u, next_beta) = (&unary[t + 1], &beta[t + 1]);
        beta[t] = DVector::from_fn(unary[t].len(), |i, _| {
            log_sum_exp((0..next_u.len()).map(|j| b[(i, j)] + next_u[j] + next_beta[j]))
        });
    }
    beta
}

pub(crate) fn forward_backward(unary: &[DVector<f64>], binary: &[DMatrix<f64>]) -> MarginalSet {
    let alpha = forward(unary, binary);
    let beta = backward(unary, binary);
    let log_z = log_sum_exp(alpha[alpha.len() - 1].iter().copied());
    let unary_m = alpha
        .iter()
        .zip(&beta)
        .map(|(a, b)| DVector::from_fn(a.len(), |l, _| (a[l] + b[l] - log_z).exp()))
        .collect();
    let pairwise = binary
        .iter()
        .enumerate()
        .map(|(t, b)| {
            DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| {
                (alpha[t][i] + b[(i, j)] + unary[t + 1][j] + beta[t + 1][j] - log_z).exp()
            })
        })
        .collect();
    MarginalSet {
        unary: unary_m,
        pairwise,
        log_partition: log_z,
    }
}

/// `log sum_y exp(score(y))` by the forward recursion.
pub fn log_partition(tables: &PotentialTables) -> f64 {
    let alpha = forward(&tables.unary, &tables.binary);
    log_sum_exp(alpha[alpha.len() - 1].iter().copied())
}

pub fn marginals(tables: &PotentialTables) -> MarginalSet {
    forward_backward(&tables.unary, &tables.binary)
}

/// Index of the largest value; the smallest index wins ties.
fn first_argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 || i == 0 {
            best = (i, v);
        }
    }
    best
}

/// Highest-scoring sequence and its score.
///
/// Max-messages run right to left so the decode can walk left to right,
/// picking the smallest label among ties at each step. This yields the
/// lexicographically smallest optimal sequence.
pub fn viterbi(tables: &PotentialTables) -> (Labels, f64) {
    let (unary, binary) = (&tables.unary, &tables.binary);
    let n = unary.len();
    let mut best_suffix = vec![DVector::zeros(0); n];
    best_suffix[n - 1] = unary[n - 1].clone();
    for t in (0..n - 1).rev() {
        let (b, next) = (&binary[t], &best_suffix[t + 1]);
        best_suffix[t] = DVector::from_fn(unary[t].len(), |i, _| {
            let (_, m) = first_argmax((0..next.len()).map(|j| b[(i, j)] + next[j]));
            unary[t][i] + m
        });
    }
    let mut y = Vec::with_capacity(n);
    y.push(first_argmax(best_suffix[0].iter().copied()).0);
    for t in 0..n - 1 {
        let (b, next, prev) = (&binary[t], &best_suffix[t + 1], y[t]);
        y.push(first_argmax((0..next.len()).map(|j| b[(prev, j)] + next[j])).0);
    }
    let s = tables.score(&y);
    (y, s)
}

#[derive(Clone, Copy)]
struct SuffixEntry {
    score: f64,
    next_label: usize,
    next_rank: usize,
}

/// Orders by score descending, then by the suffix lexicographically. Within
/// one state's list, tied scores are already in lexicographic order, so
/// comparing (next label, rank) is a lexicographic suffix comparison.
fn entry_order(a: &SuffixEntry, b: &SuffixEntry) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.next_label.cmp(&b.next_label))
        .then(a.next_rank.cmp(&b.next_rank))
}

fn compare_scored(a: &(Labels, f64), b: &(Labels, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(&b.0))
}

/// The `k` best distinct sequences, highest score first.
///
/// Each state keeps its `k` best suffixes; a suffix list at position `t` is
/// merged from the lists at `t + 1`. Cost is `O(k T N^2)` up to the sort.
pub fn kbest(tables: &PotentialTables, k: usize) -> Result<Vec<(Labels, f64)>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let (unary, binary) = (&tables.unary, &tables.binary);
    let n = unary.len();
    // lists[t][l]: best suffixes starting with label l at position t.
    let mut lists: Vec<Vec<Vec<SuffixEntry>>> = vec![Vec::new(); n];
    lists[n - 1] = unary[n - 1]
        .iter()
        .map(|&u| {
            vec![SuffixEntry {
                score: u,
                next_label: usize::MAX,
                next_rank: 0,
            }]
        })
        .collect();
    for t in (0..n - 1).rev() {
        let b = &binary[t];
        let next = &lists[t + 1];
        lists[t] = (0..unary[t].len())
            .map(|i| {
                let mut cands: Vec<SuffixEntry> = next
                    .iter()
                    .enumerate()
                    .flat_map(|(j, entries)| {
                        entries.iter().enumerate().map(move |(r, e)| SuffixEntry {
                            score: unary[t][i] + (b[(i, j)] + e.score),
                            next_label: j,
                            next_rank: r,
                        })
                    })
                    .collect();
                cands.sort_by(entry_order);
                cands.truncate(k);
                cands
            })
            .collect();
    }

    let mut roots: Vec<(usize, usize, f64)> = lists[0]
        .iter()
        .enumerate()
        .flat_map(|(l, entries)| entries.iter().enumerate().map(move |(r, e)| (l, r, e.score)))
        .collect();
    roots.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    roots.truncate(k);

    let mut out: Vec<(Labels, f64)> = roots
        .into_iter()
        .map(|(l, r, _)| {
            let mut y = Vec::with_capacity(n);
            let (mut label, mut rank) = (l, r);
            for list in lists.iter().take(n) {
                y.push(label);
                let e = list[label][rank];
                label = e.next_label;
                rank = e.next_rank;
            }
            let s = tables.score(&y);
            (y, s)
        })
        .collect();
    out.sort_by(compare_scored);
    Ok(out)
}

/// Every sequence with its score, highest first, lexicographic among ties.
pub fn brute_force(tables: &PotentialTables, limit: u128) -> Result<Vec<(Labels, f64)>> {
    let sizes = tables.label_counts();
    let size: u128 = sizes.iter().map(|&s| s as u128).product();
    if size > limit {
        return Err(Error::StateSpaceTooLarge { size, limit });
    }
    let mut all: Vec<(Labels, f64)> = enumerate_sequences(&sizes)
        .map(|y| {
            let s = tables.score(&y);
            (y, s)
        })
        .collect();
    // Enumeration is lexicographic and the sort is stable.
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal));
    Ok(all)
}

/// All label sequences over the given label-space sizes, in lexicographic order.
pub fn enumerate_sequences(sizes: &[usize]) -> impl Iterator<Item = Labels> + '_ {
    let mut current = if sizes.iter().all(|&s| s > 0) {
        Some(vec![0; sizes.len()])
    } else {
        None
    };
    std::iter::from_fn(move || {
        let out = current.clone()?;
        let mut next = out.clone();
        let mut t = sizes.len();
        loop {
            if t == 0 {
                current = None;
                break;
            }
            t -= 1;
            next[t] += 1;
            if next[t] < sizes[t] {
                current = Some(next);
                break;
            }
            next[t] = 0;
        }
        Some(out)
    })
}

/// `P(y | x) = exp(score(y) - log Z(x))`.
pub fn conditional_prob(params: &ModelParams, emb: &EmbeddingSet, x: &DVector<f64>, y: &[usize]) -> Result<f64> {
    let tables = PotentialTables::build(params, emb, x)?;
    tables.check_labels(y)?;
    Ok((tables.score(y) - log_partition(&tables)).exp())
}
