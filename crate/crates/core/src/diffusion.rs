//! Noise schedule, forward noising, the noise-prediction loss and a
//! deterministic sampler.
//!
//! Everything here works in model space, where pixel values in `[0, 1]`
//! are mapped to `[-1, 1]` (see [`to_model_space`]).

use crate::autodiff::{Graph, Var};
use crate::denoiser::{
    forward, forward_graph, DenoiserParams, DenoiserSpec, EmbeddingVars, ParamVars,
};
use crate::embeddings::MotionEmbeddingSet;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<Real>,
    alpha_bars: Vec<Real>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::linear(200, 1e-4, 2e-2).expect("valid default")
    }
}

impl NoiseSchedule {
    /// Betas evenly spaced from `beta_start` to `beta_end` over `steps`.
    pub fn linear(steps: usize, beta_start: Real, beta_end: Real) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid(format!(
                "schedule needs at least 2 steps, got {steps}"
            )));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas: Vec<Real> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as Real / (steps - 1) as Real)
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    /// `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> Real {
        self.betas[t - 1]
    }

    /// `alpha_bar_t` for `t` in `0..=T`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> Real {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// Sampler timesteps for `steps` uniform strides, descending.
    pub fn sampling_timesteps(&self, steps: usize) -> Result<Vec<usize>> {
        let big_t = self.steps();
        if steps == 0 || steps > big_t {
            return Err(Error::invalid(format!(
                "sampling steps {steps} outside 1..={big_t}"
            )));
        }
        Ok((0..steps)
            .rev()
            .map(|i| ((i + 1) * big_t).div_ceil(steps))
            .collect())
    }
}

pub fn to_model_space(video: &Tensor) -> Tensor {
    video.map(|v| 2.0 * v - 1.0)
}

pub fn to_pixel_space(x: &Tensor) -> Tensor {
    x.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}

/// `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
pub fn q_sample(schedule: &NoiseSchedule, x0: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
    schedule.check_timestep(t)?;
    q_sample_at(schedule.alpha_bar(t), x0, eps)
}

pub(crate) fn q_sample_at(alpha_bar: Real, x0: &Tensor, eps: &Tensor) -> Result<Tensor> {
    if x0.shape() != eps.shape() {
        return Err(Error::shape("q_sample", x0.shape(), eps.shape()));
    }
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(x, e)| a * x + b * e)
        .collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// Mean squared error between predicted and true noise.
pub fn noise_prediction_loss(g: &mut Graph, pred: Var, eps: Var) -> Result<Var> {
    g.mse(pred, eps)
}

/// Records the loss on an existing graph with caller-chosen trainable
/// leaves. `x0` is in model space.
#[allow(clippy::too_many_arguments)]
pub fn training_loss_graph(
    g: &mut Graph,
    schedule: &NoiseSchedule,
    spec: &DenoiserSpec,
    w: &ParamVars,
    emb: Option<&EmbeddingVars>,
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
    cond: usize,
) -> Result<Var> {
    let x_t = q_sample(schedule, x0, t, eps)?;
    let x = g.constant(x_t);
    let pred = forward_graph(g, spec, w, x, t, cond, emb)?;
    let target = g.constant(eps.clone());
    noise_prediction_loss(g, pred, target)
}

/// A loss recorded with the embeddings as the only trainable leaves.
pub struct EmbeddingLoss {
    pub graph: Graph,
    pub loss: Var,
    pub embeddings: EmbeddingVars,
}

impl EmbeddingLoss {
    pub fn value(&self) -> Real {
        self.graph.value(self.loss).data()[0]
    }

    /// Gradients in [`MotionEmbeddingSet::tensors`] order.
    pub fn gradients(&self) -> Result<Vec<Tensor>> {
        self.graph.grad(self.loss, &self.embeddings.all())
    }
}

/// The inversion objective for one `(t, eps)` draw. Params must be frozen.
pub fn training_loss(
    schedule: &NoiseSchedule,
    params: &DenoiserParams,
    m: &MotionEmbeddingSet,
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
    cond: usize,
) -> Result<EmbeddingLoss> {
    if !params.is_frozen() {
        return Err(Error::NotFrozen);
    }
    m.validate_for(params.spec())?;
    let mut g = Graph::new();
    let w = ParamVars::constants(&mut g, params);
    let embeddings = EmbeddingVars::trainable(&mut g, m);
    let loss = training_loss_graph(
        &mut g,
        schedule,
        params.spec(),
        &w,
        Some(&embeddings),
        x0,
        t,
        eps,
        cond,
    )?;
    Ok(EmbeddingLoss {
        graph: g,
        loss,
        embeddings,
    })
}

/// Deterministic (eta = 0) sampling in pixel space.
///
/// The embeddings pass through their configured inference strategy first.
/// Predicted clean frames are clipped to `[-1, 1]` at every step.
pub fn sample(
    schedule: &NoiseSchedule,
    params: &DenoiserParams,
    m: Option<&MotionEmbeddingSet>,
    cond: usize,
    seed: u64,
    steps: usize,
) -> Result<Tensor> {
    let spec = params.spec();
    let timesteps = schedule.sampling_timesteps(steps)?;
    let m = match m {
        Some(m) => {
            m.validate_for(spec)?;
            Some(m.apply_inference_strategy(m.config().inference_strategy))
        }
        None => None,
    };
    let mut rng = Rng::seed_from(seed);
    let mut x = Tensor::randn(spec.video_shape(), &mut rng);
    for (i, &t) in timesteps.iter().enumerate() {
        let t_prev = timesteps.get(i + 1).copied().unwrap_or(0);
        let eps = forward(params, &x, t, cond, m.as_ref())?;
        x = ddim_step(schedule.alpha_bar(t), schedule.alpha_bar(t_prev), &x, &eps);
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("sampler state at t = {t}")));
        }
    }
    Ok(to_pixel_space(&x))
}

fn ddim_step(ab: Real, ab_prev: Real, x: &Tensor, eps: &Tensor) -> Tensor {
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (pa, pb) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    let data = x
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&xv, &e)| {
            let x0 = ((xv - sb * e) / sa).clamp(-1.0, 1.0);
            let e = (xv - sa * x0) / sb;
            pa * x0 + pb * e
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}
