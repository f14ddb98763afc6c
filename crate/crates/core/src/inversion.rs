//! Fitting motion embeddings to a reference video, and pretraining the
//! denoiser they are fitted against.

use crate::autodiff::Graph;
use crate::denoiser::{DenoiserParams, DenoiserSpec, ParamVars};
use crate::diffusion::{to_model_space, training_loss, training_loss_graph, NoiseSchedule};
use crate::embeddings::{EmbeddingShapeConfig, MotionEmbeddingSet};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct InversionConfig {
    pub steps: usize,
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: Real,
    pub seed: u64,
    pub shape: EmbeddingShapeConfig,
    /// Progress callback cadence in steps; `0` disables it.
    pub log_every: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            steps: 400,
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            clip_norm: 1.0,
            seed: 0,
            shape: EmbeddingShapeConfig::default(),
            log_every: 50,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        check_moments(self.beta1, self.beta2)?;
        if self.clip_norm.is_nan() || self.clip_norm < 0.0 {
            return Err(Error::invalid("clip norm must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub clip_norm: Real,
    /// Seeds weight init, sample order and the noise stream.
    pub seed: u64,
    pub log_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 10_000,
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            clip_norm: 1.0,
            seed: 0,
            log_every: 100,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        check_moments(self.beta1, self.beta2)?;
        if self.clip_norm.is_nan() || self.clip_norm < 0.0 {
            return Err(Error::invalid("clip norm must be nonnegative"));
        }
        Ok(())
    }
}

fn check_moments(b1: Real, b2: Real) -> Result<()> {
    if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
        return Err(Error::invalid(format!(
            "moment coefficients must lie in [0, 1), got {b1}, {b2}"
        )));
    }
    Ok(())
}

/// Adaptive-moment optimiser with global-norm gradient clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: Real,
    beta1: Real,
    beta2: Real,
    eps: Real,
    clip_norm: Real,
    step: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: Real, beta1: Real, beta2: Real, clip_norm: Real) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            clip_norm,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Returns the parameter deltas for `grads`, in the same order.
    pub fn deltas(&mut self, grads: &[Tensor]) -> Vec<Tensor> {
        if self.m.is_empty() {
            self.m = grads
                .iter()
                .map(|g| Tensor::zeros(g.shape().to_vec()))
                .collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let norm = grads.iter().map(|g| g.sq_norm()).sum::<Real>().sqrt();
        let k = if self.clip_norm > 0.0 && norm > self.clip_norm {
            self.clip_norm / norm
        } else {
            1.0
        };
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let mut out = Vec::with_capacity(grads.len());
        for ((g, m), v) in grads.iter().zip(&mut self.m).zip(&mut self.v) {
            let mut d = Vec::with_capacity(g.len());
            for ((&gi, mi), vi) in g.data().iter().zip(m.data_mut()).zip(v.data_mut()) {
                let gi = gi * k;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                d.push(-self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps));
            }
            out.push(Tensor::new(g.shape().to_vec(), d).expect("same shape"));
        }
        out
    }
}

/// The `(t, eps)` draws of one training run. Two streams with the same
/// seed, schedule and shape yield identical draws.
#[derive(Debug, Clone)]
pub struct LossStream {
    rng: Rng,
    steps: usize,
    shape: Vec<usize>,
}

impl LossStream {
    pub fn new(seed: u64, schedule: &NoiseSchedule, shape: &[usize]) -> Self {
        LossStream {
            rng: Rng::stream(seed, 0x1055),
            steps: schedule.steps(),
            shape: shape.to_vec(),
        }
    }

    pub fn draw(&mut self) -> (usize, Tensor) {
        let t = 1 + self.rng.below(self.steps as u64) as usize;
        let eps = Tensor::randn(self.shape.clone(), &mut self.rng);
        (t, eps)
    }
}

#[derive(Debug, Clone)]
pub struct Inversion {
    pub embeddings: MotionEmbeddingSet,
    /// Loss at each step, evaluated before that step's update.
    pub losses: Vec<Real>,
}

fn check_video(spec: &DenoiserSpec, video: &Tensor) -> Result<()> {
    if video.shape() != spec.video_shape() {
        return Err(Error::shape(
            "reference video",
            video.shape(),
            &spec.video_shape(),
        ));
    }
    if !video.is_finite() {
        return Err(Error::NonFinite("reference video".into()));
    }
    Ok(())
}

/// Fits a zero-initialised embedding set to `video` (pixel space).
pub fn invert(
    schedule: &NoiseSchedule,
    video: &Tensor,
    params: &DenoiserParams,
    cond: usize,
    cfg: &InversionConfig,
) -> Result<Inversion> {
    invert_with_progress(schedule, video, params, cond, cfg, |_, _| {})
}

/// [`invert`] calling `progress(step, loss)` every `cfg.log_every` steps.
pub fn invert_with_progress(
    schedule: &NoiseSchedule,
    video: &Tensor,
    params: &DenoiserParams,
    cond: usize,
    cfg: &InversionConfig,
    mut progress: impl FnMut(usize, Real),
) -> Result<Inversion> {
    cfg.validate()?;
    if !params.is_frozen() {
        return Err(Error::NotFrozen);
    }
    let spec = params.spec();
    check_video(spec, video)?;
    let x0 = to_model_space(video);
    let mut m = MotionEmbeddingSet::init_zero(spec, cfg.shape, spec.frames)?;
    let mut stream = LossStream::new(cfg.seed, schedule, x0.shape());
    let mut opt = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.clip_norm);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (t, eps) = stream.draw();
        let lg = training_loss(schedule, params, &m, &x0, t, &eps, cond)?;
        let loss = lg.value();
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        let grads = lg.gradients()?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step });
        }
        for (p, d) in m.tensors_mut().zip(opt.deltas(&grads)) {
            p.add_assign(&d);
        }
        losses.push(loss);
        if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
            progress(step + 1, loss);
        }
    }
    Ok(Inversion {
        embeddings: m,
        losses,
    })
}

/// Losses of a fixed embedding set on the stream `invert` would draw with
/// `seed`. Used to compare a fitted set against a baseline on identical
/// `(t, eps)` pairs.
pub fn paired_losses(
    schedule: &NoiseSchedule,
    video: &Tensor,
    params: &DenoiserParams,
    cond: usize,
    m: &MotionEmbeddingSet,
    seed: u64,
    steps: usize,
) -> Result<Vec<Real>> {
    let spec = params.spec();
    check_video(spec, video)?;
    let x0 = to_model_space(video);
    let mut stream = LossStream::new(seed, schedule, x0.shape());
    (0..steps)
        .map(|_| {
            let (t, eps) = stream.draw();
            Ok(training_loss(schedule, params, m, &x0, t, &eps, cond)?.value())
        })
        .collect()
}

/// One training example: a pixel-space video and its prompt id.
#[derive(Debug, Clone)]
pub struct Example {
    pub video: Tensor,
    pub cond: usize,
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    /// Frozen.
    pub params: DenoiserParams,
    pub losses: Vec<Real>,
}

pub fn pretrain(
    schedule: &NoiseSchedule,
    data: &[Example],
    spec: &DenoiserSpec,
    cfg: &PretrainConfig,
) -> Result<Pretrained> {
    pretrain_with_progress(schedule, data, spec, cfg, |_, _| {})
}

/// Trains every denoiser weight on the noise-prediction objective, one
/// randomly chosen example per step.
pub fn pretrain_with_progress(
    schedule: &NoiseSchedule,
    data: &[Example],
    spec: &DenoiserSpec,
    cfg: &PretrainConfig,
    mut progress: impl FnMut(usize, Real),
) -> Result<Pretrained> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("pretraining dataset is empty"));
    }
    let mut params = DenoiserParams::init(spec, cfg.seed)?;
    let xs = data
        .iter()
        .map(|ex| {
            check_video(spec, &ex.video)?;
            if ex.cond >= spec.vocab {
                return Err(Error::invalid(format!(
                    "prompt id {} outside vocabulary",
                    ex.cond
                )));
            }
            Ok(to_model_space(&ex.video))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pick = Rng::stream(cfg.seed, 0xDA7A);
    let mut stream = LossStream::new(cfg.seed, schedule, &spec.video_shape());
    let mut opt = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.clip_norm);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let i = pick.below(xs.len() as u64) as usize;
        let (t, eps) = stream.draw();
        let mut g = Graph::new();
        let w = ParamVars::trainable(&mut g, &params);
        let loss = training_loss_graph(
            &mut g,
            schedule,
            spec,
            &w,
            None,
            &xs[i],
            t,
            &eps,
            data[i].cond,
        )?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Diverged { step });
        }
        let grads = g.grad(loss, &w.all())?;
        let deltas = opt.deltas(&grads);
        params.update(|k, p| p.add(&deltas[k]).expect("same shape"))?;
        losses.push(value);
        if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
            progress(step + 1, value);
        }
    }
    Ok(Pretrained {
        params: params.frozen(),
        losses,
    })
}

/// `step loss` per line, steps counted from 1.
pub fn loss_log(losses: &[Real]) -> String {
    let mut s = String::with_capacity(losses.len() * 24);
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{} {:.17e}\n", i + 1, l));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_spec() -> DenoiserSpec {
        DenoiserSpec {
            base_channels: 4,
            height: 4,
            width: 4,
            frames: 3,
            time_dim: 8,
            ..DenoiserSpec::default()
        }
    }

    fn toy_video(spec: &DenoiserSpec, seed: u64) -> Tensor {
        let mut rng = Rng::seed_from(seed);
        Tensor::from_fn(spec.video_shape(), |_| rng.uniform() as Real)
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut opt = Adam::new(0.1, 0.9, 0.999, 0.0);
        let d = opt.deltas(&[Tensor::new([3], vec![2.0, -0.5, 0.0]).unwrap()]);
        let got = d[0].data();
        assert!((got[0] + 0.1).abs() < 1e-6);
        assert!((got[1] - 0.1).abs() < 1e-6);
        assert_eq!(got[2], 0.0);
    }

    #[test]
    fn adam_clips_global_norm() {
        // With clipping the first moment sees the rescaled gradient; the
        // first Adam step is scale free, so compare second-step moments.
        let g = vec![Tensor::new([2], vec![30.0, 40.0]).unwrap()];
        let mut clipped = Adam::new(0.1, 0.9, 0.999, 1.0);
        clipped.deltas(&g);
        assert!((clipped.m[0].data()[0] - 0.1 * 0.6).abs() < 1e-12);
        assert!((clipped.m[0].data()[1] - 0.1 * 0.8).abs() < 1e-12);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut x = Tensor::new([2], vec![3.0, -2.0]).unwrap();
        let mut opt = Adam::new(0.05, 0.9, 0.999, 1.0);
        for _ in 0..2000 {
            let g = x.scale(2.0);
            let d = opt.deltas(&[g]);
            x.add_assign(&d[0]);
        }
        assert!(x.sq_norm() < 1e-4, "{:?}", x.data());
    }

    #[test]
    fn zero_steps_returns_zero_set() {
        let spec = toy_spec();
        let p = DenoiserParams::init(&spec, 0).unwrap().frozen();
        let cfg = InversionConfig {
            steps: 0,
            ..InversionConfig::default()
        };
        let r = invert(&NoiseSchedule::default(), &toy_video(&spec, 1), &p, 0, &cfg).unwrap();
        assert!(r.embeddings.is_zero());
        assert!(r.losses.is_empty());
    }

    #[test]
    fn rejects_unfrozen_and_bad_video() {
        let spec = toy_spec();
        let s = NoiseSchedule::default();
        let p = DenoiserParams::init(&spec, 0).unwrap();
        let cfg = InversionConfig::default();
        assert!(matches!(
            invert(&s, &toy_video(&spec, 1), &p, 0, &cfg),
            Err(Error::NotFrozen)
        ));
        let p = p.frozen();
        let wrong = Tensor::zeros([1, 3, 4, 4, 4]);
        assert!(invert(&s, &wrong, &p, 0, &cfg).is_err());
        let bad = InversionConfig { lr: 0.0, ..cfg };
        assert!(invert(&s, &toy_video(&spec, 1), &p, 0, &bad).is_err());
    }

    #[test]
    fn inversion_is_reproducible_and_leaves_params_alone() {
        let spec = toy_spec();
        let s = NoiseSchedule::default();
        let p = DenoiserParams::init(&spec, 4).unwrap().frozen();
        let before = p.checksum();
        let cfg = InversionConfig {
            steps: 30,
            ..InversionConfig::default()
        };
        let video = toy_video(&spec, 2);
        let a = invert(&s, &video, &p, 1, &cfg).unwrap();
        let b = invert(&s, &video, &p, 1, &cfg).unwrap();
        assert_eq!(p.checksum(), before);
        assert!(a.embeddings.bit_eq(&b.embeddings));
        assert_eq!(
            a.losses.iter().map(|l| l.to_bits()).collect::<Vec<_>>(),
            b.losses.iter().map(|l| l.to_bits()).collect::<Vec<_>>()
        );
        assert!(!a.embeddings.is_zero());
    }

    #[test]
    fn paired_stream_matches_inversion_first_loss() {
        let spec = toy_spec();
        let s = NoiseSchedule::default();
        let p = DenoiserParams::init(&spec, 4).unwrap().frozen();
        let video = toy_video(&spec, 2);
        let cfg = InversionConfig {
            steps: 5,
            seed: 9,
            ..InversionConfig::default()
        };
        let r = invert(&s, &video, &p, 0, &cfg).unwrap();
        let zero = MotionEmbeddingSet::init_zero(&spec, cfg.shape, spec.frames).unwrap();
        let base = paired_losses(&s, &video, &p, 0, &zero, 9, 5).unwrap();
        // Step 0 is evaluated at the zero set.
        assert_eq!(r.losses[0].to_bits(), base[0].to_bits());
    }

    #[test]
    fn pretrain_is_deterministic_and_frozen() {
        let spec = toy_spec();
        let s = NoiseSchedule::default();
        let data: Vec<Example> = (0..3)
            .map(|i| Example {
                video: toy_video(&spec, i),
                cond: i as usize,
            })
            .collect();
        let cfg = PretrainConfig {
            steps: 20,
            ..PretrainConfig::default()
        };
        let a = pretrain(&s, &data, &spec, &cfg).unwrap();
        let b = pretrain(&s, &data, &spec, &cfg).unwrap();
        assert!(a.params.is_frozen());
        assert!(a.params.bit_eq(&b.params));
        assert_eq!(a.losses.len(), 20);
        assert!(pretrain(&s, &[], &spec, &cfg).is_err());
    }

    #[test]
    fn loss_log_format() {
        let text = loss_log(&[0.5, 0.25]);
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("1 "));
        assert_eq!(
            lines[1].split(' ').nth(1).unwrap().parse::<f64>().unwrap(),
            0.25
        );
    }
}
