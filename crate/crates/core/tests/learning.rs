mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use tuplecrf::inference::{conditional_prob, viterbi};
use tuplecrf::learning::nuclear::{nuclear_norm, prox_nuclear};
use tuplecrf::learning::{fobos_train, nll_gradient, nll_loss, objective, regularizer, StepSchedule, TrainConfig};
use tuplecrf::model::{effective_rank, rank_report};
use tuplecrf::synth::{generate, SynthConfig};
use tuplecrf::{AnnotatedImage, Dataset, Model, ModelParams, PotentialTables};

fn doubled(data: &Dataset) -> Dataset {
    let mut images = data.images.clone();
    for img in &data.images {
        let mut copy = img.clone();
        copy.image_id.push_str("_dup");
        images.push(copy);
    }
    Dataset::new(data.spec.clone(), images).unwrap()
}

#[test]
fn loss_and_gradient_are_additive() {
    let mut rng = rng(23);
    let sizes = [3, 4, 2];
    let dims = [2, 3, 2];
    let spec = spec(&sizes, 4);
    let emb = dense_set(&mut rng, &sizes, &dims);
    let params = random_params(&mut rng, &dims, 4, 0.5);
    let data = random_dataset(&mut rng, &spec, 7, 3);
    let twice = doubled(&data);
    let l1 = nll_loss(&params, &emb, &data).unwrap();
    let l2 = nll_loss(&params, &emb, &twice).unwrap();
    assert!((l2 - 2.0 * l1).abs() < 1e-10 * l1);
    let g1 = nll_gradient(&params, &emb, &data).unwrap();
    let g2 = nll_gradient(&params, &emb, &twice).unwrap();
    for (a, b) in g1.matrices().zip(g2.matrices()) {
        assert!((b - a * 2.0).amax() < 1e-10 * a.amax().max(1.0));
    }
}

#[test]
fn loss_is_sum_of_negative_log_probabilities() {
    let mut rng = rng(29);
    let sizes = [2, 3, 3];
    let dims = [2, 2, 3];
    let spec = spec(&sizes, 3);
    let emb = dense_set(&mut rng, &sizes, &dims);
    let params = random_params(&mut rng, &dims, 3, 0.8);
    let data = random_dataset(&mut rng, &spec, 5, 2);
    let expect: f64 = data
        .pairs()
        .map(|(x, y)| -conditional_prob(&params, &emb, x, y).unwrap().ln())
        .sum();
    let got = nll_loss(&params, &emb, &data).unwrap();
    assert!((got - expect).abs() <= 1e-9 * expect.abs());
}

#[test]
fn objective_composes_loss_and_penalty() {
    let mut rng = rng(31);
    let sizes = [3, 3];
    let dims = [2, 3];
    let spec = spec(&sizes, 2);
    let emb = dense_set(&mut rng, &sizes, &dims);
    let params = random_params(&mut rng, &dims, 2, 1.0);
    let data = random_dataset(&mut rng, &spec, 4, 2);
    let loss = direct_loss(&params, &emb, &data);

    let free = TrainConfig {
        c1: 0.0,
        c2: 0.0,
        ..TrainConfig::default()
    };
    assert!((objective(&params, &emb, &data, &free).unwrap() - loss).abs() < 1e-10 * loss);

    let unit = TrainConfig {
        c1: 1.0,
        c2: 1.0,
        ..TrainConfig::default()
    };
    let penalty: f64 = params.matrices().map(|m| jacobi_svd(m).1.iter().sum::<f64>()).sum();
    let got = objective(&params, &emb, &data, &unit).unwrap();
    assert!((got - (loss + penalty)).abs() < 1e-9 * got);

    let zero = ModelParams::zeros(&dims, 2);
    assert_eq!(regularizer(&zero, 5.0, 5.0), 0.0);
    assert_eq!(
        objective(&zero, &emb, &data, &unit).unwrap(),
        nll_loss(&zero, &emb, &data).unwrap()
    );
}

#[test]
fn prox_random_three_by_four() {
    let mut rng = rng(37);
    let m = gaussian(&mut rng, 3, 4, 1.0);
    let p = prox_nuclear(&m, 0.5);
    let q = reference_prox(&m, 0.5);
    assert!((p - q).amax() < 1e-10);
}

/// Two images with orthogonal features and disjoint gold tuples.
fn separable() -> (Dataset, tuplecrf::EmbeddingSet) {
    let sizes = [2, 2, 2];
    let spec = spec(&sizes, 2);
    let images = vec![
        AnnotatedImage {
            image_id: "a".into(),
            features: DVector::from_vec(vec![1.0, 0.0]),
            gold_tuples: [vec![0, 1, 0]].into_iter().collect(),
        },
        AnnotatedImage {
            image_id: "b".into(),
            features: DVector::from_vec(vec![0.0, 1.0]),
            gold_tuples: [vec![1, 0, 1]].into_iter().collect(),
        },
    ];
    (Dataset::new(spec, images).unwrap(), indicator_set(&sizes))
}

#[test]
fn unregularized_training_fits_separable_data() {
    let (data, emb) = separable();
    let config = TrainConfig {
        c1: 0.0,
        c2: 0.0,
        base_step: 0.5,
        max_iter: 200,
        step_schedule: StepSchedule::Constant,
        tolerance: 0.0,
        ..TrainConfig::default()
    };
    let out = fobos_train(&data, &emb, &config).unwrap();
    assert_eq!(out.log.len(), 201);
    let objectives = out.objectives();
    assert!(objectives.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    for img in &data.images {
        let tables = PotentialTables::build(&out.params, &emb, &img.features).unwrap();
        let gold = img.gold_tuples.iter().next().unwrap();
        assert_eq!(&viterbi(&tables).0, gold, "image {}", img.image_id);
    }
}

#[test]
fn enormous_penalty_keeps_params_zero() {
    let (data, emb) = separable();
    let config = TrainConfig {
        c1: 1e3,
        c2: 1e3,
        base_step: 0.1,
        max_iter: 25,
        step_schedule: StepSchedule::Constant,
        tolerance: 0.0,
        ..TrainConfig::default()
    };
    let out = fobos_train(&data, &emb, &config).unwrap();
    assert!(out.params.matrices().all(|m| m.iter().all(|&v| v == 0.0)));
    assert!(out.log.iter().all(|r| r.ranks.iter().all(|&k| k == 0)));
}

fn small_synth() -> (Dataset, tuplecrf::EmbeddingSet) {
    let data = generate(&SynthConfig {
        labels: vec![4, 3, 4],
        embedding_dims: vec![3, 3, 3],
        input_dim: 5,
        rank: 2,
        samples: 120,
        heldout: 0,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let emb = data.model.embeddings.clone();
    (data.train_dataset(), emb)
}

#[test]
fn final_objective_agrees_with_finer_run() {
    let (data, emb) = small_synth();
    let base = TrainConfig {
        c1: 0.5,
        c2: 0.5,
        base_step: 0.004,
        max_iter: 150,
        step_schedule: StepSchedule::Constant,
        tolerance: 0.0,
        ..TrainConfig::default()
    };
    let fine = TrainConfig {
        base_step: base.base_step / 10.0,
        max_iter: base.max_iter * 10,
        ..base.clone()
    };
    let a = *fobos_train(&data, &emb, &base).unwrap().objectives().last().unwrap();
    let b = *fobos_train(&data, &emb, &fine).unwrap().objectives().last().unwrap();
    assert!((a - b).abs() <= 0.01 * b, "coarse {a}, fine {b}");
}

#[test]
fn objective_settles_after_warmup() {
    let (data, emb) = small_synth();
    let config = TrainConfig {
        c1: 0.1,
        c2: 0.1,
        base_step: 0.004,
        max_iter: 60,
        step_schedule: StepSchedule::InverseSqrt,
        tolerance: 0.0,
        ..TrainConfig::default()
    };
    let obj = fobos_train(&data, &emb, &config).unwrap().objectives();
    for t in 10..obj.len() - 1 {
        assert!(
            obj[t + 1] <= obj[t] * (1.0 + 1e-6),
            "iteration {t}: {} -> {}",
            obj[t],
            obj[t + 1]
        );
    }
}

#[test]
fn tolerance_stops_early() {
    let (data, emb) = small_synth();
    let config = TrainConfig {
        base_step: 0.004,
        max_iter: 500,
        tolerance: 1e-4,
        ..TrainConfig::default()
    };
    let out = fobos_train(&data, &emb, &config).unwrap();
    assert!(out.log.len() < 501);
}

#[test]
fn rank_falls_as_unary_penalty_grows() {
    let (data, emb) = small_synth();
    let mut previous: Option<Vec<usize>> = None;
    for c1 in [0.0, 0.01, 0.1, 1.0, 10.0, 100.0] {
        let config = TrainConfig {
            c1,
            c2: 0.1,
            base_step: 0.004,
            max_iter: 150,
            step_schedule: StepSchedule::Constant,
            tolerance: 0.0,
            ..TrainConfig::default()
        };
        let out = fobos_train(&data, &emb, &config).unwrap();
        let ranks: Vec<usize> = rank_report(&out.params, 1e-8)[..3]
            .iter()
            .map(|r| r.effective_rank)
            .collect();
        if let Some(prev) = &previous {
            for (now, before) in ranks.iter().zip(prev) {
                assert!(now <= before, "c1 = {c1}: {ranks:?} after {prev:?}");
            }
        }
        previous = Some(ranks);
    }
    assert_eq!(previous.unwrap(), vec![0, 0, 0]);
}

#[test]
fn trained_model_top5_matches_enumeration() {
    let (data, emb) = small_synth();
    let config = TrainConfig {
        base_step: 0.004,
        max_iter: 40,
        ..TrainConfig::default()
    };
    let out = fobos_train(&data, &emb, &config).unwrap();
    let model = Model::new(data.spec.clone(), emb, out.params).unwrap();
    for img in data.images.iter().take(20) {
        let preds = tuplecrf::evaluation::predict_topk(&model, &img.image_id, &img.features, 5).unwrap();
        let truth = enumerate(&RawChain::from_tables(&model.tables(&img.features).unwrap()));
        for ((y, s), (ty, ts)) in preds.top_k.iter().zip(&truth.ranked) {
            assert_eq!(y, ty);
            assert!(rel_close(*s, *ts, 1e-12));
        }
    }
}

#[test]
fn effective_rank_is_relative() {
    assert_eq!(effective_rank(&[], 1e-8), 0);
    assert_eq!(effective_rank(&[0.0, 0.0], 1e-8), 0);
    // cutoff is 1e-2 for sigma_max = 1e6
    assert_eq!(effective_rank(&[1e6, 1e-1], 1e-8), 2);
    assert_eq!(effective_rank(&[1e6, 1e-3], 1e-8), 1);
    assert_eq!(effective_rank(&[1e6, 1e-1, 1e-3], 1e-10), 3);
    let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
    assert!((nuclear_norm(&m) - 2.0).abs() < 1e-14);
}
