mod common;

use common::enumerate;
use common::RawChain;
use tuplecrf::inference::viterbi;
use tuplecrf::synth::{generate, SynthConfig};

fn base() -> SynthConfig {
    SynthConfig {
        labels: vec![5, 4, 5],
        embedding_dims: vec![4, 4, 4],
        input_dim: 6,
        rank: 2,
        samples: 400,
        heldout: 0,
        seed: 5,
        ..SynthConfig::default()
    }
}

#[test]
fn peaked_model_samples_its_mode() {
    let config = SynthConfig {
        embedding_dims: vec![10, 10, 10],
        input_dim: 20,
        samples: 2000,
        scale: SynthConfig::default().scale * 10.0,
        noise: 0.0,
        ..base()
    };
    let data = generate(&config).unwrap();
    let hits = data
        .train
        .iter()
        .filter(|s| viterbi(&data.model.tables(&s.clean).unwrap()).0 == s.tuple)
        .count();
    let rate = hits as f64 / data.train.len() as f64;
    assert!(rate >= 0.95, "only {rate} of samples equal the mode");
}

#[test]
fn rank_zero_samples_uniformly() {
    let config = SynthConfig {
        rank: 0,
        samples: 3000,
        ..base()
    };
    let data = generate(&config).unwrap();
    let n = data.train.len() as f64;
    for (t, &size) in config.labels.iter().enumerate() {
        let p = 1.0 / size as f64;
        let sigma = (n * p * (1.0 - p)).sqrt();
        for l in 0..size {
            let count = data.train.iter().filter(|s| s.tuple[t] == l).count() as f64;
            assert!((count - n * p).abs() < 5.0 * sigma, "position {t} label {l}: {count}");
        }
    }
}

#[test]
fn noise_only_touches_written_features() {
    let clean = generate(&base()).unwrap();
    let noisy = generate(&SynthConfig { noise: 0.5, ..base() }).unwrap();
    assert_eq!(clean.model, noisy.model);
    for (a, b) in clean.train.iter().zip(&noisy.train) {
        assert_eq!(a.clean, b.clean);
        assert_eq!(a.tuple, b.tuple);
        assert_eq!(a.clean, a.features);
        assert_ne!(b.clean, b.features);
    }
}

#[test]
fn sample_frequencies_follow_model() {
    // one input repeated: empirical tuple frequencies against exact probabilities
    let config = SynthConfig {
        labels: vec![2, 2],
        embedding_dims: vec![2, 2],
        input_dim: 2,
        rank: 1,
        samples: 1,
        heldout: 0,
        seed: 9,
        ..SynthConfig::default()
    };
    let data = generate(&config).unwrap();
    let tables = data.model.tables(&data.train[0].clean).unwrap();
    let exact = enumerate(&RawChain::from_tables(&tables));
    for (y, s) in &exact.ranked {
        let p = (s - exact.log_z).exp();
        assert!((0.0..=1.0).contains(&p), "{y:?}");
    }
    let total: f64 = exact.ranked.iter().map(|(_, s)| (s - exact.log_z).exp()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}
