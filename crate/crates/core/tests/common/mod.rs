//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here calls into the inference or learning code of the crate:
//! chains are scored with plain loops, distributions come from full
//! enumeration and singular values from a one-sided Jacobi iteration.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tuplecrf::{
    AnnotatedImage, ChainSpec, Dataset, EmbeddingSet, EmbeddingSource, ModelParams, PotentialTables, Vocabulary,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| normal(rng) * std)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

// ------------------------------------------------------------ chain oracle

/// Plain-vector copy of a chain's potentials, scored with explicit loops.
#[derive(Clone, Debug)]
pub struct RawChain {
    pub unary: Vec<Vec<f64>>,
    pub binary: Vec<Vec<Vec<f64>>>,
}

impl RawChain {
    pub fn random(rng: &mut ChaCha8Rng, sizes: &[usize], scale: f64) -> Self {
        let unary = sizes
            .iter()
            .map(|&n| (0..n).map(|_| normal(rng) * scale).collect())
            .collect();
        let binary = sizes
            .windows(2)
            .map(|w| {
                (0..w[0])
                    .map(|_| (0..w[1]).map(|_| normal(rng) * scale).collect())
                    .collect()
            })
            .collect();
        RawChain { unary, binary }
    }

    pub fn from_tables(t: &PotentialTables) -> Self {
        RawChain {
            unary: t.unary.iter().map(|u| u.iter().copied().collect()).collect(),
            binary: t
                .binary
                .iter()
                .map(|b| {
                    (0..b.nrows())
                        .map(|i| (0..b.ncols()).map(|j| b[(i, j)]).collect())
                        .collect()
                })
                .collect(),
        }
    }

    pub fn tables(&self) -> PotentialTables {
        PotentialTables::new(
            self.unary.iter().map(|u| DVector::from_vec(u.clone())).collect(),
            self.binary
                .iter()
                .map(|b| DMatrix::from_fn(b.len(), b[0].len(), |i, j| b[i][j]))
                .collect(),
        )
        .unwrap()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.unary.iter().map(Vec::len).collect()
    }

    pub fn score(&self, y: &[usize]) -> f64 {
        let mut s = 0.0;
        for (t, &l) in y.iter().enumerate() {
            s += self.unary[t][l];
        }
        for t in 0..y.len() - 1 {
            s += self.binary[t][y[t]][y[t + 1]];
        }
        s
    }
}

/// Every label sequence in lexicographic order (last position fastest).
pub fn all_sequences(sizes: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = sizes.iter().product();
    let mut out = Vec::with_capacity(total);
    for mut code in 0..total {
        let mut y = vec![0; sizes.len()];
        for t in (0..sizes.len()).rev() {
            y[t] = code % sizes[t];
            code /= sizes[t];
        }
        out.push(y);
    }
    out
}

/// Exact quantities of a chain distribution from full enumeration.
pub struct Enumerated {
    pub log_z: f64,
    pub unary: Vec<Vec<f64>>,
    pub pairwise: Vec<Vec<Vec<f64>>>,
    /// All sequences by descending score, ties in lexicographic order.
    pub ranked: Vec<(Vec<usize>, f64)>,
}

pub fn enumerate(chain: &RawChain) -> Enumerated {
    let sizes = chain.sizes();
    let scored: Vec<(Vec<usize>, f64)> = all_sequences(&sizes)
        .into_iter()
        .map(|y| {
            let s = chain.score(&y);
            (y, s)
        })
        .collect();
    let max = scored.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + scored.iter().map(|p| (p.1 - max).exp()).sum::<f64>().ln();
    let mut unary: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
    let mut pairwise: Vec<Vec<Vec<f64>>> = sizes.windows(2).map(|w| vec![vec![0.0; w[1]]; w[0]]).collect();
    for (y, s) in &scored {
        let p = (s - log_z).exp();
        for (t, &l) in y.iter().enumerate() {
            unary[t][l] += p;
        }
        for t in 0..y.len() - 1 {
            pairwise[t][y[t]][y[t + 1]] += p;
        }
    }
    let mut ranked = scored;
    // stable: lexicographic order survives among equal scores
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    Enumerated {
        log_z,
        unary,
        pairwise,
        ranked,
    }
}

// ------------------------------------------------------------- model setup

pub fn spec(sizes: &[usize], d: usize) -> ChainSpec {
    let names = ["locative", "predicate", "actor"];
    ChainSpec::new(
        sizes
            .iter()
            .enumerate()
            .map(|(t, &n)| {
                let name = if sizes.len() == 3 {
                    names[t].to_string()
                } else {
                    format!("pos{t}")
                };
                Vocabulary::new(name, (0..n).map(|i| format!("l{t}_{i}")).collect()).unwrap()
            })
            .collect(),
        d,
    )
    .unwrap()
}

pub fn indicator_set(sizes: &[usize]) -> EmbeddingSet {
    EmbeddingSet::new(
        sizes.iter().map(|&n| DMatrix::identity(n, n)).collect(),
        vec![EmbeddingSource::Indicator; sizes.len()],
    )
    .unwrap()
}

pub fn dense_set(rng: &mut ChaCha8Rng, sizes: &[usize], dims: &[usize]) -> EmbeddingSet {
    EmbeddingSet::new(
        sizes
            .iter()
            .zip(dims)
            .map(|(&l, &n)| gaussian(rng, l, n, 1.0))
            .collect(),
        vec![EmbeddingSource::External; sizes.len()],
    )
    .unwrap()
}

pub fn random_params(rng: &mut ChaCha8Rng, dims: &[usize], d: usize, scale: f64) -> ModelParams {
    ModelParams {
        unary: dims.iter().map(|&n| gaussian(rng, n, d, scale)).collect(),
        binary: dims.windows(2).map(|w| gaussian(rng, w[0], w[1], scale)).collect(),
    }
}

/// Random dataset with one to `max_tuples` distinct gold tuples per image.
pub fn random_dataset(rng: &mut ChaCha8Rng, spec: &ChainSpec, images: usize, max_tuples: usize) -> Dataset {
    let sizes = spec.label_counts();
    let d = spec.input_dim();
    let imgs = (0..images)
        .map(|i| {
            let count = rng.random_range(1..=max_tuples);
            let gold_tuples = (0..count)
                .map(|_| sizes.iter().map(|&n| rng.random_range(0..n)).collect())
                .collect();
            AnnotatedImage {
                image_id: format!("img{i}"),
                features: DVector::from_fn(d, |_, _| normal(rng)),
                gold_tuples,
            }
        })
        .collect();
    Dataset::new(spec.clone(), imgs).unwrap()
}

// ------------------------------------------------- direct model evaluation

/// `v_a^T M v_b` with explicit loops.
fn bilinear(va: &[f64], m: &DMatrix<f64>, vb: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            s += va[i] * m[(i, j)] * vb[j];
        }
    }
    s
}

fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    (0..m.ncols()).map(|j| m[(i, j)]).collect()
}

/// Score of `y` straight from the definition.
pub fn direct_score(params: &ModelParams, emb: &EmbeddingSet, x: &DVector<f64>, y: &[usize]) -> f64 {
    let xs: Vec<f64> = x.iter().copied().collect();
    let mut s = 0.0;
    for (t, &l) in y.iter().enumerate() {
        s += bilinear(&row(emb.matrix(t), l), &params.unary[t], &xs);
    }
    for t in 0..y.len() - 1 {
        s += bilinear(
            &row(emb.matrix(t), y[t]),
            &params.binary[t],
            &row(emb.matrix(t + 1), y[t + 1]),
        );
    }
    s
}

/// Summed negative log-likelihood by enumeration.
pub fn direct_loss(params: &ModelParams, emb: &EmbeddingSet, dataset: &Dataset) -> f64 {
    let sizes = dataset.spec.label_counts();
    let seqs = all_sequences(&sizes);
    let mut loss = 0.0;
    for img in &dataset.images {
        let scores: Vec<f64> = seqs
            .iter()
            .map(|y| direct_score(params, emb, &img.features, y))
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        for y in &img.gold_tuples {
            loss += log_z - direct_score(params, emb, &img.features, y);
        }
    }
    loss
}

/// Central differences of [`direct_loss`] for every parameter entry.
pub fn finite_difference_gradient(
    params: &ModelParams,
    emb: &EmbeddingSet,
    dataset: &Dataset,
    h: f64,
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let probe = |which: usize, k: usize, i: usize, j: usize| {
        let mut p = params.clone();
        let m = if which == 0 { &mut p.unary[k] } else { &mut p.binary[k] };
        m[(i, j)] += h;
        let plus = direct_loss(&p, emb, dataset);
        let m = if which == 0 { &mut p.unary[k] } else { &mut p.binary[k] };
        m[(i, j)] -= 2.0 * h;
        let minus = direct_loss(&p, emb, dataset);
        (plus - minus) / (2.0 * h)
    };
    let unary = params
        .unary
        .iter()
        .enumerate()
        .map(|(k, m)| DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| probe(0, k, i, j)))
        .collect();
    let binary = params
        .binary
        .iter()
        .enumerate()
        .map(|(k, m)| DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| probe(1, k, i, j)))
        .collect();
    (unary, binary)
}

// -------------------------------------------------------------- SVD oracle

/// Thin SVD by one-sided Jacobi rotations: `(u, sigma, v)` with
/// `m = u diag(sigma) v^T`, singular values in descending order.
pub fn jacobi_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    if m.nrows() < m.ncols() {
        let (u, s, v) = jacobi_svd(&m.transpose());
        return (v, s, u);
    }
    let (rows, cols) = m.shape();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(cols, cols);
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = (0..rows).map(|i| a[(i, p)] * a[(i, p)]).sum();
                let beta: f64 = (0..rows).map(|i| a[(i, q)] * a[(i, q)]).sum();
                let gamma: f64 = (0..rows).map(|i| a[(i, p)] * a[(i, q)]).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (x, y) = (a[(i, p)], a[(i, q)]);
                    a[(i, p)] = c * x - s * y;
                    a[(i, q)] = s * x + c * y;
                }
                for i in 0..cols {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<(usize, f64)> = (0..cols).map(|j| (j, a.column(j).norm())).collect();
    order.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap());
    let mut u = DMatrix::zeros(rows, cols);
    let mut vs = DMatrix::zeros(cols, cols);
    let mut sigma = Vec::with_capacity(cols);
    for (k, &(j, s)) in order.iter().enumerate() {
        sigma.push(s);
        if s > 0.0 {
            u.set_column(k, &(a.column(j) / s));
        }
        vs.set_column(k, &v.column(j));
    }
    (u, sigma, vs)
}

/// Singular value soft thresholding via [`jacobi_svd`].
pub fn reference_prox(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let (u, s, v) = jacobi_svd(m);
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, &sk) in s.iter().enumerate() {
        let shrunk = (sk - tau).max(0.0);
        if shrunk > 0.0 {
            out += shrunk * u.column(k) * v.column(k).transpose();
        }
    }
    out
}
