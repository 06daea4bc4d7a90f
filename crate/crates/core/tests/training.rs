use acne_core::model::{
    embed_patch, encode_head, train_regression, EmbeddingVector, ProjectionBackend, TrainConfig,
};
use acne_core::synth::{lesion_dataset, LesionRegion};
use acne_core::SeverityLabel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn embeddings(n: usize, seed: u64) -> Vec<EmbeddingVector> {
    let labels: Vec<SeverityLabel> = (0..n)
        .map(|i| SeverityLabel::from_index(i % 5).unwrap())
        .collect();
    let backend = ProjectionBackend::with_defaults(seed);
    lesion_dataset(&labels, 48, LesionRegion::Anywhere, seed)
        .iter()
        .map(|(img, _)| embed_patch(&backend, img).unwrap())
        .collect()
}

/// `w . e` for a random `w`, mapped affinely onto [1, 5].
fn linear_targets(x: &[EmbeddingVector], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..x[0].dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let raw: Vec<f64> = x
        .iter()
        .map(|e| e.values().iter().zip(&w).map(|(a, b)| f64::from(*a) * b).sum())
        .collect();
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    raw.iter().map(|v| 1.0 + 4.0 * (v - lo) / (hi - lo)).collect()
}

#[test]
fn realizable_linear_target_is_learned() {
    let x = embeddings(1000, 1);
    let y = linear_targets(&x, 2);
    let (_, report) = train_regression(&x, &y, &TrainConfig::default()).unwrap();
    assert!(report.train_loss < 0.01, "training MSE {}", report.train_loss);
}

#[test]
fn full_batch_loss_never_increases() {
    let x = embeddings(60, 3);
    let y = linear_targets(&x, 4);
    let cfg = TrainConfig {
        batch_size: 60,
        validation_fraction: 0.0,
        epochs: 40,
        hidden: vec![64, 32, 16],
        ..TrainConfig::default()
    };
    let (_, report) = train_regression(&x, &y, &cfg).unwrap();
    for (i, w) in report.epoch_losses.windows(2).enumerate() {
        assert!(w[1] <= w[0] + 1e-6, "epoch {}: {} -> {}", i + 1, w[0], w[1]);
    }
}

#[test]
fn same_seed_same_weights() {
    let x = embeddings(50, 5);
    let y = linear_targets(&x, 6);
    let cfg = TrainConfig {
        seed: 9,
        epochs: 5,
        hidden: vec![32, 16, 8],
        ..TrainConfig::default()
    };
    let (a, ra) = train_regression(&x, &y, &cfg).unwrap();
    let (b, rb) = train_regression(&x, &y, &cfg).unwrap();
    assert_eq!(encode_head(&a), encode_head(&b));
    assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
    let (c, _) = train_regression(&x, &y, &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(encode_head(&a), encode_head(&c));
}
