//! Synthetic problems drawn from a known low-rank bilinear chain model.
//!
//! Unary and binary matrices are products of Gaussian rank-`r` factors,
//! embeddings and inputs are Gaussian, and each image gets one tuple sampled
//! exactly from the model's conditional distribution by enumeration.
//!
//! Embeddings, inputs and factors are standard normal; `scale` multiplies
//! every factor product.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{enumerate_sequences, DEFAULT_ENUMERATION_LIMIT};
use crate::model::{Model, PotentialTables};
use crate::types::{
    AnnotatedImage, ChainSpec, Dataset, EmbeddingSet, EmbeddingSource, Labels, ModelParams, Vocabulary,
    TUPLE_ARGUMENT_TYPES,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// |L_t| per position.
    pub labels: Vec<usize>,
    /// n_t per position.
    pub embedding_dims: Vec<usize>,
    pub input_dim: usize,
    pub rank: usize,
    /// Training images.
    pub samples: usize,
    /// Additional held-out images drawn from the same model.
    pub heldout: usize,
    /// Std of Gaussian noise added to the written features. Sampling always
    /// uses the clean input.
    pub noise: f64,
    /// Multiplier on every `W_t` and `Z_t`.
    pub scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            labels: vec![15, 15, 15],
            embedding_dims: vec![10, 10, 10],
            input_dim: 20,
            rank: 2,
            samples: 2000,
            heldout: 500,
            noise: 0.0,
            scale: 0.3,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("synth config: {m}")));
        let t = self.labels.len();
        if t == 0 {
            return bad("need at least one position".into());
        }
        if self.embedding_dims.len() != t {
            return bad(format!(
                "{} embedding dims for {t} positions",
                self.embedding_dims.len()
            ));
        }
        if self.labels.contains(&0) || self.embedding_dims.contains(&0) || self.input_dim == 0 {
            return bad("sizes must be at least 1".into());
        }
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        for (i, &n) in self.embedding_dims.iter().enumerate() {
            if self.rank > n.min(self.input_dim) {
                return bad(format!("rank {} exceeds min(n_{i}, d)", self.rank));
            }
        }
        for (i, w) in self.embedding_dims.windows(2).enumerate() {
            if self.rank > w[0].min(w[1]) {
                return bad(format!("rank {} exceeds min(n_{i}, n_{})", self.rank, i + 1));
            }
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) || !(self.scale.is_finite() && self.scale >= 0.0) {
            return bad("noise and scale must be finite and >= 0".into());
        }
        let space: u128 = self.labels.iter().map(|&l| l as u128).product();
        if space > DEFAULT_ENUMERATION_LIMIT {
            return Err(Error::StateSpaceTooLarge {
                size: space,
                limit: DEFAULT_ENUMERATION_LIMIT,
            });
        }
        Ok(())
    }

    pub fn argument_types(&self) -> Vec<String> {
        if self.labels.len() == TUPLE_ARGUMENT_TYPES.len() {
            TUPLE_ARGUMENT_TYPES.iter().map(|s| s.to_string()).collect()
        } else {
            (0..self.labels.len()).map(|t| format!("pos{t}")).collect()
        }
    }
}

/// A sampled image: clean input, written (possibly noisy) features, tuple.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub image_id: String,
    pub clean: DVector<f64>,
    pub features: DVector<f64>,
    pub tuple: Labels,
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub model: Model,
    pub train: Vec<SynthSample>,
    pub heldout: Vec<SynthSample>,
}

impl SynthData {
    /// Dataset over the written features.
    pub fn dataset(&self, samples: &[SynthSample]) -> Dataset {
        Dataset {
            spec: self.model.spec.clone(),
            images: samples
                .iter()
                .map(|s| AnnotatedImage {
                    image_id: s.image_id.clone(),
                    features: s.features.clone(),
                    gold_tuples: [s.tuple.clone()].into_iter().collect(),
                })
                .collect(),
        }
    }

    pub fn train_dataset(&self) -> Dataset {
        self.dataset(&self.train)
    }

    pub fn heldout_dataset(&self) -> Dataset {
        self.dataset(&self.heldout)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

fn low_rank(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rank: usize, scale: f64) -> DMatrix<f64> {
    if rank == 0 {
        return DMatrix::zeros(rows, cols);
    }
    let a = gaussian(rng, rows, rank, 1.0);
    let b = gaussian(rng, rank, cols, 1.0);
    (a * b) * scale
}

/// Draws `y ~ P(y | x)` by inverse CDF over the lexicographic enumeration.
fn sample_tuple(tables: &PotentialTables, rng: &mut ChaCha8Rng) -> Labels {
    let sizes = tables.label_counts();
    let scored: Vec<(Labels, f64)> = enumerate_sequences(&sizes)
        .map(|y| {
            let s = tables.score(&y);
            (y, s)
        })
        .collect();
    let max = scored.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scored.iter().map(|(_, s)| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for ((y, _), w) in scored.iter().zip(&weights) {
        if u < *w {
            return y.clone();
        }
        u -= w;
    }
    scored[scored.len() - 1].0.clone()
}

/// Samples a ground-truth model and `samples + heldout` images.
pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let types = config.argument_types();
    let d = config.input_dim;

    let vocabs = types
        .iter()
        .zip(&config.labels)
        .map(|(name, &n)| Vocabulary::new(name.clone(), (0..n).map(|i| format!("{name}_{i}")).collect()))
        .collect::<Result<Vec<_>>>()?;
    let spec = ChainSpec::new(vocabs, d)?;

    let embeddings = config
        .labels
        .iter()
        .zip(&config.embedding_dims)
        .map(|(&l, &n)| gaussian(&mut rng, l, n, 1.0))
        .collect();
    let embeddings = EmbeddingSet::new(embeddings, vec![EmbeddingSource::External; config.labels.len()])?;

    let dims = &config.embedding_dims;
    let unary = dims
        .iter()
        .map(|&n| low_rank(&mut rng, n, d, config.rank, config.scale))
        .collect();
    let binary = dims
        .windows(2)
        .map(|w| low_rank(&mut rng, w[0], w[1], config.rank, config.scale))
        .collect();
    let model = Model::new(spec, embeddings, ModelParams { unary, binary })?;

    let noise = Normal::new(0.0, config.noise).expect("validated noise");
    let draw = |prefix: &str, count: usize, rng: &mut ChaCha8Rng| -> Result<Vec<SynthSample>> {
        (0..count)
            .map(|i| {
                let clean = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
                let tables = model.tables(&clean)?;
                let tuple = sample_tuple(&tables, rng);
                let features = clean.map(|v| v + noise.sample(rng));
                Ok(SynthSample {
                    image_id: format!("{prefix}{i:05}"),
                    clean,
                    features,
                    tuple,
                })
            })
            .collect()
    };
    let train = draw("train_", config.samples, &mut rng)?;
    let heldout = draw("heldout_", config.heldout, &mut rng)?;
    Ok(SynthData { model, train, heldout })
}
