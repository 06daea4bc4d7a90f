use std::hint::black_box;

use acne_core::augmentation::{roll_patch, Axis, RollSpec};
use acne_core::face_patches::{NullBackend, PatchGeometry, SidecarBackend};
use acne_core::model::{
    score_image, EmbeddingBackend, ProjectionBackend, RegressionHead, DEFAULT_HIDDEN,
};
use acne_core::synth::{frontal_face, lesion_patch, LesionRegion};
use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn widths(d: usize) -> Vec<usize> {
    let mut w = vec![d];
    w.extend(DEFAULT_HIDDEN);
    w.push(1);
    w
}

fn augmentation(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let patch = lesion_patch(224, 12, LesionRegion::Anywhere, &mut rng);
    c.bench_function("roll_patch 224x224", |b| {
        b.iter(|| {
            roll_patch(
                black_box(&patch),
                RollSpec {
                    axis: Axis::Horizontal,
                    roll_size: 74,
                },
            )
            .unwrap()
        })
    });
}

fn model(c: &mut Criterion) {
    let backend = ProjectionBackend::with_defaults(0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let patch = lesion_patch(224, 12, LesionRegion::Anywhere, &mut rng);
    c.bench_function("projection embed", |b| {
        b.iter(|| backend.embed(black_box(&patch)).unwrap())
    });

    let d = backend.dim();
    let mut head = RegressionHead::new(&widths(d), 3).unwrap();
    let x = Array2::from_shape_fn((32, d), |_| rng.random_range(-1.0f32..1.0));
    let t = Array1::from_shape_fn(32, |_| rng.random_range(1.0f32..5.0));
    c.bench_function("head forward batch 32", |b| {
        b.iter(|| head.forward(black_box(x.view())))
    });
    c.bench_function("head train step batch 32", |b| {
        b.iter(|| {
            let (_, g) = head.loss_and_gradients(x.view(), t.view());
            head.apply_gradients(&g, 1e-6);
        })
    });
}

fn scoring(c: &mut Criterion) {
    let (img, lm) = frontal_face(640, 640, 4);
    let mut sidecars = SidecarBackend::new();
    sidecars.insert_landmarks(&img, lm);
    let backend = ProjectionBackend::with_defaults(0);
    let head = RegressionHead::new(&widths(backend.dim()), 3).unwrap();
    let geometry = PatchGeometry::default();
    c.bench_function("score_image 640x640", |b| {
        b.iter(|| {
            score_image("b", black_box(&img), &sidecars, &NullBackend, &backend, &head, &geometry)
                .unwrap()
        })
    });
}

criterion_group!(benches, augmentation, model, scoring);
criterion_main!(benches);
