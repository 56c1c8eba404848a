use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use lipkit_core::diffusion::guided_combine;
use lipkit_core::masking::refine_with_occlusion;
use lipkit_core::ranking::{bootstrap_elo, synthetic_log};
use lipkit_core::{ClipShape, EloConfig, GuidanceWeights, LatentClip, MaskRaster};

fn masks(c: &mut Criterion) {
    let a = MaskRaster::new(64, 64, (0..4096).map(|i| i % 3 != 0).collect()).unwrap();
    let b = MaskRaster::new(64, 64, (0..4096).map(|i| i % 5 == 0).collect()).unwrap();
    c.bench_function("refine_with_occlusion_64x64", |bench| {
        bench.iter(|| refine_with_occlusion(black_box(&a), black_box(&b)).unwrap())
    });
}

fn guidance(c: &mut Criterion) {
    let shape = ClipShape::new(14, 4, 16, 16);
    let clip = |k: f64| {
        LatentClip::from_vec(
            shape,
            (0..shape.len()).map(|i| (i as f64 * k).sin()).collect(),
        )
        .unwrap()
    };
    let (e, i, a) = (clip(0.1), clip(0.2), clip(0.3));
    let w = GuidanceWeights::default();
    c.bench_function("guided_combine_14x4x16x16", |bench| {
        bench.iter(|| guided_combine(black_box(&e), black_box(&i), black_box(&a), &w).unwrap())
    });
}

fn elo(c: &mut Criterion) {
    let log = synthetic_log(
        &[("m1", 1300.0), ("m2", 1100.0), ("m3", 900.0), ("m4", 700.0)],
        1000,
        5,
    );
    let config = EloConfig {
        bootstrap_rounds: 100,
        ..Default::default()
    };
    c.bench_function("bootstrap_elo_1000x100", |bench| {
        bench.iter(|| bootstrap_elo(black_box(&log), &config).unwrap())
    });
}

criterion_group!(benches, masks, guidance, elo);
criterion_main!(benches);
