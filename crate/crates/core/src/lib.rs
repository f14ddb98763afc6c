//! Motion-embedding inversion for a toy video diffusion denoiser.
//!
//! Motion embeddings are learnable additive inputs to the temporal
//! self-attention modules of a frozen video denoiser. Fitting them to one
//! reference video under the usual noise-prediction objective captures that
//! video's motion; a frame-differencing transform strips static appearance
//! before the embeddings are reused to generate new videos.
//!
//! Module map:
//!
//! * [`tensor`], [`autodiff`], [`rng`]: arrays, reverse-mode gradients, seeded RNG
//! * [`attention`]: temporal self-attention with embedding injection
//! * [`embeddings`]: the embedding set, its shape ablations and debiasing
//! * [`denoiser`]: the frozen noise-prediction network
//! * [`diffusion`]: noise schedule, training loss, deterministic sampler
//! * [`inversion`]: embedding optimisation and denoiser pretraining
//! * [`synth`]: procedural moving-shape videos with ground-truth tracks
//! * [`metrics`]: point tracker, motion fidelity, temporal consistency, Fréchet distance

// `as f64` casts are identities unless the `f32` feature is on.
#![allow(clippy::unnecessary_cast)]

pub mod attention;
pub mod autodiff;
pub mod codec;
pub mod denoiser;
pub mod diffusion;
pub mod embeddings;
pub mod error;
pub mod inversion;
pub mod metrics;
pub mod rng;
pub mod synth;
pub mod tensor;

/// Scalar type of every tensor.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
/// Scalar type of every tensor.
#[cfg(feature = "f32")]
pub type Real = f32;

pub use attention::AttentionWeights;
pub use autodiff::{Graph, Var};
pub use denoiser::{DenoiserParams, DenoiserSpec};
pub use diffusion::NoiseSchedule;
pub use embeddings::{EmbeddingShapeConfig, InferenceStrategy, MotionEmbeddingSet, Spatial};
pub use error::{Error, FormatError, Result};
pub use inversion::{InversionConfig, PretrainConfig};
pub use metrics::Tracklet;
pub use rng::Rng;
pub use synth::{GroundTruth, MotionScript};
pub use tensor::Tensor;
