use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use motinv_core::attention::temporal_attention;
use motinv_core::denoiser::{forward, DenoiserParams, DenoiserSpec};
use motinv_core::diffusion::{to_model_space, training_loss, NoiseSchedule};
use motinv_core::metrics::track;
use motinv_core::synth;
use motinv_core::{AttentionWeights, EmbeddingShapeConfig, MotionEmbeddingSet, Rng, Tensor};

fn kernels(c: &mut Criterion) {
    let mut rng = Rng::seed_from(0);
    let a = Tensor::randn(vec![256, 32], &mut rng);
    let b = Tensor::randn(vec![32, 32], &mut rng);
    c.bench_function("matmul 256x32x32", |bench| {
        bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap())
    });

    let f = Tensor::randn(vec![256, 8, 32], &mut rng);
    let w = AttentionWeights::new(
        Tensor::randn(vec![32, 32], &mut rng).scale(0.2),
        Tensor::randn(vec![32, 32], &mut rng).scale(0.2),
        Tensor::randn(vec![32, 32], &mut rng).scale(0.2),
    )
    .unwrap();
    c.bench_function("temporal attention 256x8x32", |bench| {
        bench.iter(|| temporal_attention(black_box(&f), &w).unwrap())
    });
}

fn network(c: &mut Criterion) {
    let spec = DenoiserSpec::default();
    let schedule = NoiseSchedule::default();
    let params = DenoiserParams::init(&spec, 0).unwrap().frozen();
    let mut rng = Rng::seed_from(1);
    let x = Tensor::randn(spec.video_shape(), &mut rng);
    let m =
        MotionEmbeddingSet::init_zero(&spec, EmbeddingShapeConfig::default(), spec.frames).unwrap();
    c.bench_function("denoiser forward", |bench| {
        bench.iter(|| forward(&params, black_box(&x), 100, 0, Some(&m)).unwrap())
    });

    let script = synth::pan_script("bench", spec.frames, spec.height, spec.width, (1.5, 0.0));
    let (video, _) = synth::render(&script, 0).unwrap();
    let x0 = to_model_space(&video);
    let eps = Tensor::randn(spec.video_shape(), &mut rng);
    c.bench_function("inversion step (loss + gradients)", |bench| {
        bench.iter(|| {
            let l = training_loss(&schedule, &params, &m, &x0, 100, &eps, 0).unwrap();
            l.gradients().unwrap()
        })
    });
    c.bench_function("track 8x16x16", |bench| {
        bench.iter(|| track(black_box(&video)).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = kernels, network
}
criterion_main!(benches);
