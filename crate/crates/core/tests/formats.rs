//! Round trips and hostile inputs for the three binary formats.

use motinv_core::denoiser::{DenoiserParams, DenoiserSpec};
use motinv_core::synth::{video_from_bytes, video_to_bytes};
use motinv_core::{
    EmbeddingShapeConfig, InferenceStrategy, MotionEmbeddingSet, Rng, Spatial, Tensor,
};

fn tiny_spec(rng: &mut Rng) -> DenoiserSpec {
    DenoiserSpec {
        base_channels: 2 + rng.below(4) as usize,
        height: 4,
        width: 4,
        frames: 2 + rng.below(3) as usize,
        channel_mults: vec![1, 2],
        modules_per_level: 1 + rng.below(2) as usize,
        vocab: 1 + rng.below(3) as usize,
        time_dim: 4,
        ..DenoiserSpec::default()
    }
}

fn random_embeddings(rng: &mut Rng, spec: &DenoiserSpec) -> MotionEmbeddingSet {
    let spatial = |r: &mut Rng| {
        if r.below(2) == 0 {
            Spatial::OneD
        } else {
            Spatial::TwoD
        }
    };
    let mut cfg = EmbeddingShapeConfig::new(spatial(rng), spatial(rng));
    cfg.inference_strategy = [
        InferenceStrategy::Differential,
        InferenceStrategy::Normalize,
        InferenceStrategy::Vanilla,
    ][rng.below(3) as usize];
    let mut m = MotionEmbeddingSet::init_zero(spec, cfg, spec.frames).unwrap();
    for t in m.tensors_mut() {
        *t = Tensor::randn(t.shape().to_vec(), rng);
    }
    m
}

#[test]
fn random_round_trips_are_bitwise() {
    let mut rng = Rng::seed_from(2024);
    for i in 0..40 {
        let spec = tiny_spec(&mut rng);
        let p = DenoiserParams::init(&spec, i).unwrap();
        let p = if rng.below(2) == 0 { p.frozen() } else { p };
        let back = DenoiserParams::from_bytes(&p.to_bytes()).unwrap();
        assert!(back.bit_eq(&p) && back.is_frozen() == p.is_frozen());
        assert_eq!(back.to_bytes(), p.to_bytes());

        let m = random_embeddings(&mut rng, &spec);
        let back = MotionEmbeddingSet::from_bytes(&m.to_bytes()).unwrap();
        assert!(back.bit_eq(&m));
        assert_eq!(back.config(), m.config());

        let shape = vec![
            1,
            1 + rng.below(3) as usize,
            spec.frames,
            1 + rng.below(5) as usize,
            1 + rng.below(5) as usize,
        ];
        let video = Tensor::randn(shape, &mut rng);
        let bytes = video_to_bytes(&video).unwrap();
        let back = video_from_bytes(&bytes).unwrap();
        assert_eq!(video_to_bytes(&back).unwrap(), bytes);
    }
}

#[test]
fn every_truncation_is_an_error() {
    let mut rng = Rng::seed_from(1);
    let spec = tiny_spec(&mut rng);
    let files = [
        DenoiserParams::init(&spec, 0).unwrap().to_bytes(),
        random_embeddings(&mut rng, &spec).to_bytes(),
        video_to_bytes(&Tensor::randn(vec![1, 3, 2, 3, 3], &mut rng)).unwrap(),
    ];
    for bytes in &files {
        for len in 0..bytes.len() {
            let cut = &bytes[..len];
            assert!(DenoiserParams::from_bytes(cut).is_err());
            assert!(MotionEmbeddingSet::from_bytes(cut).is_err());
            assert!(video_from_bytes(cut).is_err());
        }
    }
}

#[test]
fn random_bytes_never_panic() {
    let mut rng = Rng::seed_from(99);
    let spec = tiny_spec(&mut rng);
    let seeds = [
        DenoiserParams::init(&spec, 0).unwrap().to_bytes(),
        random_embeddings(&mut rng, &spec).to_bytes(),
        video_to_bytes(&Tensor::randn(vec![1, 3, 2, 3, 3], &mut rng)).unwrap(),
    ];
    for _ in 0..2000 {
        let mut bytes = seeds[rng.below(3) as usize].clone();
        for _ in 0..1 + rng.below(4) {
            let pos = rng.below(bytes.len() as u64) as usize;
            bytes[pos] = rng.next_u64() as u8;
        }
        let _ = DenoiserParams::from_bytes(&bytes);
        let _ = MotionEmbeddingSet::from_bytes(&bytes);
        let _ = video_from_bytes(&bytes);
    }
}
