//! The toy video noise-prediction network.
//!
//! A two-path ladder over frame-major features `[H*W, N, C]`:
//!
//! ```text
//! down level l:  [pool 2x2]  ->  channel mix  ->  + time/cond  ->  MLP  ->  temporal attn x k
//! up level l:    [upsample]  ->  channel mix  ->  [+ skip_l]   ->  + time/cond  ->  MLP  ->  temporal attn x k
//! MLP:           h + mix(SiLU(dwconv3x3(mix(h))))
//! output:        SiLU -> channel mix to image channels
//! ```
//!
//! Spatial context comes from the 2x2 pool/upsample ladder and one
//! depthwise 3x3 kernel per MLP. MLP and attention blocks are residual; the
//! attention blocks are where motion embeddings are injected, numbered
//! down path first, then up path from the coarsest level.
//!
//! # MDEN0001 layout
//!
//! Little-endian. `magic "MDEN0001"`, then u32 fields `image_channels`,
//! `base_channels`, `height`, `width`, `frames`, `levels`, one channel
//! multiplier per level, `modules_per_level`, `vocab`, `time_dim`; a u8
//! frozen flag (0/1) and three zero bytes; u32 tensor count; CRC-32 of all
//! preceding bytes. The payload is every weight tensor as row-major f64 in
//! the order of [`DenoiserParams::tensor_names`].

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::attention::{
    from_frame_major_graph, temporal_attention_graph, to_frame_major_graph, AttentionVars,
};
use crate::autodiff::{Graph, Var};
use crate::codec::{self, Reader, Writer};
use crate::embeddings::MotionEmbeddingSet;
use crate::error::{Error, FormatError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::Real;

pub const MDEN_MAGIC: &[u8; 8] = b"MDEN0001";

const MAX_EXTENT: usize = 4096;
const MAX_LEVELS: usize = 8;

/// Channels and spatial size seen by one temporal attention module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModuleDescriptor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenoiserSpec {
    pub image_channels: usize,
    pub base_channels: usize,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Channel multiplier of each resolution level, finest first.
    pub channel_mults: Vec<usize>,
    /// Temporal attention modules per level, per path (down and up).
    pub modules_per_level: usize,
    /// Number of prompt ids.
    pub vocab: usize,
    pub time_dim: usize,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        DenoiserSpec {
            image_channels: 3,
            base_channels: 32,
            height: 16,
            width: 16,
            frames: 8,
            channel_mults: vec![1, 2],
            modules_per_level: 1,
            vocab: 4,
            time_dim: 32,
        }
    }
}

impl DenoiserSpec {
    pub fn levels(&self) -> usize {
        self.channel_mults.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("image_channels", self.image_channels),
            ("base_channels", self.base_channels),
            ("height", self.height),
            ("width", self.width),
            ("frames", self.frames),
            ("modules_per_level", self.modules_per_level),
            ("vocab", self.vocab),
            ("time_dim", self.time_dim),
        ];
        for (name, v) in fields {
            if v == 0 || v > MAX_EXTENT {
                return Err(Error::invalid(format!(
                    "{name} = {v} out of range 1..={MAX_EXTENT}"
                )));
            }
        }
        let levels = self.levels();
        if levels == 0 || levels > MAX_LEVELS {
            return Err(Error::invalid(format!(
                "levels = {levels} out of range 1..={MAX_LEVELS}"
            )));
        }
        if self
            .channel_mults
            .iter()
            .any(|&m| m == 0 || m * self.base_channels > MAX_EXTENT)
        {
            return Err(Error::invalid(format!(
                "bad channel multipliers {:?}",
                self.channel_mults
            )));
        }
        let div = 1 << (levels - 1);
        if self.height % div != 0 || self.width % div != 0 {
            return Err(Error::invalid(format!(
                "height {} and width {} must be divisible by {div}",
                self.height, self.width
            )));
        }
        if self.time_dim % 2 != 0 {
            return Err(Error::invalid("time_dim must be even"));
        }
        Ok(())
    }

    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels * self.channel_mults[level]
    }

    pub fn level_size(&self, level: usize) -> (usize, usize) {
        (self.height >> level, self.width >> level)
    }

    /// Temporal modules in injection order: down path, then up path.
    pub fn temporal_modules(&self) -> Vec<ModuleDescriptor> {
        let at = |l: usize| {
            let (height, width) = self.level_size(l);
            ModuleDescriptor {
                channels: self.level_channels(l),
                height,
                width,
            }
        };
        let down =
            (0..self.levels()).flat_map(|l| std::iter::repeat_n(at(l), self.modules_per_level));
        let up = (0..self.levels())
            .rev()
            .flat_map(|l| std::iter::repeat_n(at(l), self.modules_per_level));
        down.chain(up).collect()
    }

    pub fn video_shape(&self) -> [usize; 5] {
        [1, self.image_channels, self.frames, self.height, self.width]
    }
}

/// Weights of one resolution level on one path.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelWeights<T> {
    /// Channel mix applied on entry to the level.
    pub proj: T,
    /// Projection of the shared time/cond embedding to this level's channels.
    pub time: T,
    pub mlp_in: T,
    /// Depthwise 3x3 kernel applied inside the MLP branch.
    pub spatial: T,
    pub mlp_out: T,
    /// `[wq, wk, wv]` per temporal module.
    pub attn: Vec<[T; 3]>,
}

/// All weights of the network, generic over storage (tensors or graph vars).
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    pub time_proj: T,
    pub cond_table: T,
    pub down: Vec<LevelWeights<T>>,
    pub up: Vec<LevelWeights<T>>,
    pub out: T,
}

impl<T> LevelWeights<T> {
    fn items(&self) -> Vec<&T> {
        let mut v = vec![
            &self.proj,
            &self.time,
            &self.mlp_in,
            &self.spatial,
            &self.mlp_out,
        ];
        for a in &self.attn {
            v.extend(a.iter());
        }
        v
    }

    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> LevelWeights<U> {
        LevelWeights {
            proj: f(&self.proj),
            time: f(&self.time),
            mlp_in: f(&self.mlp_in),
            spatial: f(&self.spatial),
            mlp_out: f(&self.mlp_out),
            attn: self
                .attn
                .iter()
                .map(|[q, k, v]| [f(q), f(k), f(v)])
                .collect(),
        }
    }
}

impl<T> Weights<T> {
    /// Every weight in storage order.
    pub fn items(&self) -> Vec<&T> {
        let mut v = vec![&self.time_proj, &self.cond_table];
        for l in self.down.iter().chain(&self.up) {
            v.extend(l.items());
        }
        v.push(&self.out);
        v
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Weights<U> {
        Weights {
            time_proj: f(&self.time_proj),
            cond_table: f(&self.cond_table),
            down: self.down.iter().map(|l| l.map(&mut f)).collect(),
            up: self.up.iter().map(|l| l.map(&mut f)).collect(),
            out: f(&self.out),
        }
    }
}

fn layout(spec: &DenoiserSpec) -> Weights<(String, Vec<usize>)> {
    let d = spec.time_dim;
    let level = |path: &str, l: usize, c_in: usize| {
        let c = spec.level_channels(l);
        LevelWeights {
            proj: (format!("{path}{l}.proj"), vec![c_in, c]),
            time: (format!("{path}{l}.time"), vec![d, c]),
            mlp_in: (format!("{path}{l}.mlp_in"), vec![c, c]),
            spatial: (format!("{path}{l}.spatial"), vec![3, 3, c]),
            mlp_out: (format!("{path}{l}.mlp_out"), vec![c, c]),
            attn: (0..spec.modules_per_level)
                .map(|k| ["wq", "wk", "wv"].map(|n| (format!("{path}{l}.attn{k}.{n}"), vec![c, c])))
                .collect(),
        }
    };
    let levels = spec.levels();
    let down = (0..levels)
        .map(|l| {
            let c_in = if l == 0 {
                spec.image_channels
            } else {
                spec.level_channels(l - 1)
            };
            level("down", l, c_in)
        })
        .collect();
    let up = (0..levels)
        .rev()
        .map(|l| {
            let c_in = spec.level_channels((l + 1).min(levels - 1));
            level("up", l, c_in)
        })
        .collect();
    Weights {
        time_proj: ("time_proj".into(), vec![d, d]),
        cond_table: ("cond_table".into(), vec![spec.vocab, d]),
        down,
        up,
        out: ("out".into(), vec![spec.base_channels, spec.image_channels]),
    }
}

/// Weights of the noise predictor plus the frozen flag.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    spec: DenoiserSpec,
    weights: Weights<Tensor>,
    frozen: bool,
}

impl DenoiserParams {
    /// Normal weights scaled by `1/sqrt(fan_in)`; deterministic per seed.
    /// Fan-in is the product of all but the last axis.
    pub fn init(spec: &DenoiserSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = Rng::seed_from(seed);
        let weights = layout(spec).map(|(_, shape)| {
            let fan_in: usize = shape[..shape.len() - 1].iter().product();
            let scale = 1.0 / (fan_in as Real).sqrt();
            Tensor::randn(shape.clone(), &mut rng).scale(scale)
        });
        Ok(DenoiserParams {
            spec: spec.clone(),
            weights,
            frozen: false,
        })
    }

    pub fn from_tensors(spec: &DenoiserSpec, tensors: Vec<Tensor>, frozen: bool) -> Result<Self> {
        spec.validate()?;
        let lay = layout(spec);
        let want = lay.items().len();
        if tensors.len() != want {
            return Err(Error::invalid(format!(
                "expected {want} tensors, got {}",
                tensors.len()
            )));
        }
        for ((name, shape), t) in lay.items().into_iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::invalid(format!(
                    "{name}: expected {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let weights = lay.map(|_| it.next().expect("counted"));
        Ok(DenoiserParams {
            spec: spec.clone(),
            weights,
            frozen,
        })
    }

    pub fn spec(&self) -> &DenoiserSpec {
        &self.spec
    }

    pub fn weights(&self) -> &Weights<Tensor> {
        &self.weights
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.weights.items()
    }

    /// Replaces every tensor, in storage order. Rejected once frozen.
    pub fn update(&mut self, mut f: impl FnMut(usize, &Tensor) -> Tensor) -> Result<()> {
        if self.frozen {
            return Err(Error::invalid("parameters are frozen"));
        }
        let mut i = 0;
        let next = self.weights.map(|t| {
            let out = f(i, t);
            i += 1;
            out
        });
        self.weights = next;
        Ok(())
    }

    pub fn tensor_names(&self) -> Vec<String> {
        layout(&self.spec)
            .items()
            .into_iter()
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    /// SHA-256 over the serialized spec and weights, hex encoded.
    pub fn checksum(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn bit_eq(&self, other: &DenoiserParams) -> bool {
        self.spec == other.spec
            && self.frozen == other.frozen
            && self
                .tensors()
                .iter()
                .zip(other.tensors())
                .all(|(a, b)| a.bit_eq(b))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.spec;
        let mut w = Writer::new(MDEN_MAGIC);
        for v in [
            s.image_channels,
            s.base_channels,
            s.height,
            s.width,
            s.frames,
            s.levels(),
        ] {
            w.usize(v);
        }
        for &m in &s.channel_mults {
            w.usize(m);
        }
        for v in [s.modules_per_level, s.vocab, s.time_dim] {
            w.usize(v);
        }
        w.u8(self.frozen as u8);
        w.u8(0);
        w.u8(0);
        w.u8(0);
        let tensors = self.tensors();
        w.usize(tensors.len());
        w.header_checksum();
        for t in tensors {
            w.f64s(t.data().iter().map(|&v| v as f64));
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes, MDEN_MAGIC, "MDEN")?;
        let image_channels = r.extent("image_channels")?;
        let base_channels = r.extent("base_channels")?;
        let height = r.extent("height")?;
        let width = r.extent("width")?;
        let frames = r.extent("frames")?;
        let levels = r.extent("levels")?;
        if levels > MAX_LEVELS {
            return Err(FormatError::InvalidField {
                field: "levels",
                detail: format!("{levels} > {MAX_LEVELS}"),
            });
        }
        let channel_mults = (0..levels)
            .map(|_| r.extent("channel multiplier"))
            .collect::<Result<Vec<_>, _>>()?;
        let modules_per_level = r.extent("modules_per_level")?;
        let vocab = r.extent("vocab")?;
        let time_dim = r.extent("time_dim")?;
        let frozen = match r.u8()? {
            0 => false,
            1 => true,
            v => {
                return Err(FormatError::InvalidField {
                    field: "frozen",
                    detail: format!("{v} is not 0 or 1"),
                })
            }
        };
        for _ in 0..3 {
            if r.u8()? != 0 {
                return Err(FormatError::InvalidField {
                    field: "reserved",
                    detail: "must be 0".into(),
                });
            }
        }
        let count = r.u32()? as usize;
        r.verify_header_checksum()?;
        let spec = DenoiserSpec {
            image_channels,
            base_channels,
            height,
            width,
            frames,
            channel_mults,
            modules_per_level,
            vocab,
            time_dim,
        };
        spec.validate().map_err(|e| FormatError::InvalidField {
            field: "spec",
            detail: e.to_string(),
        })?;
        let lay = layout(&spec);
        let shapes: Vec<&Vec<usize>> = lay.items().into_iter().map(|(_, s)| s).collect();
        if count != shapes.len() {
            return Err(FormatError::InvalidField {
                field: "tensor count",
                detail: format!("{count}, spec implies {}", shapes.len()),
            });
        }
        let mut tensors = Vec::with_capacity(count);
        for shape in shapes {
            let n: usize = shape.iter().product();
            let data = r.f64s(n)?.into_iter().map(|v| v as Real).collect();
            tensors.push(Tensor::new(shape.clone(), data).map_err(|e| {
                FormatError::InvalidField {
                    field: "payload",
                    detail: e.to_string(),
                }
            })?);
        }
        r.finish()?;
        DenoiserParams::from_tensors(&spec, tensors, frozen).map_err(|e| {
            FormatError::InvalidField {
                field: "payload",
                detail: e.to_string(),
            }
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        codec::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = codec::read_file(path)?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

/// Network weights on a graph.
pub type ParamVars = Weights<Var>;

impl ParamVars {
    pub fn constants(g: &mut Graph, p: &DenoiserParams) -> Self {
        p.weights.map(|t| g.constant(t.clone()))
    }

    pub fn trainable(g: &mut Graph, p: &DenoiserParams) -> Self {
        p.weights.map(|t| g.param(t.clone()))
    }

    pub fn all(&self) -> Vec<Var> {
        self.items().into_iter().copied().collect()
    }
}

/// Motion embeddings on a graph, plus an optional per-module on/off mask
/// for debugging.
#[derive(Debug, Clone)]
pub struct EmbeddingVars {
    pub qk: Vec<Var>,
    pub v: Vec<Var>,
    pub mask: Option<Vec<bool>>,
}

impl EmbeddingVars {
    pub fn constants(g: &mut Graph, m: &MotionEmbeddingSet) -> Self {
        Self::build(g, m, false)
    }

    pub fn trainable(g: &mut Graph, m: &MotionEmbeddingSet) -> Self {
        Self::build(g, m, true)
    }

    fn build(g: &mut Graph, m: &MotionEmbeddingSet, train: bool) -> Self {
        let mut mk = |t: &Tensor| {
            if train {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let (mut qk, mut v) = (Vec::new(), Vec::new());
        for i in 0..m.num_modules() {
            qk.push(mk(m.qk(i)));
            v.push(mk(m.v(i)));
        }
        EmbeddingVars { qk, v, mask: None }
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Self {
        self.mask = Some(mask);
        self
    }

    /// Vars in [`MotionEmbeddingSet::tensors_mut`] order.
    pub fn all(&self) -> Vec<Var> {
        self.qk
            .iter()
            .zip(&self.v)
            .flat_map(|(a, b)| [*a, *b])
            .collect()
    }

    fn active(&self, i: usize) -> bool {
        self.mask
            .as_ref()
            .is_none_or(|m| m.get(i).copied().unwrap_or(true))
    }
}

/// Sinusoidal embedding of an integer timestep, `[1, dim]`.
pub fn timestep_embedding(t: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut data = vec![0.0 as Real; dim];
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        data[k] = arg.sin() as Real;
        data[half + k] = arg.cos() as Real;
    }
    Tensor::new(vec![1, dim], data).expect("dim > 0")
}

fn check_input(spec: &DenoiserSpec, x: &[usize], cond: usize) -> Result<()> {
    if x != spec.video_shape() {
        return Err(Error::shape("denoiser input", x, &spec.video_shape()));
    }
    if cond >= spec.vocab {
        return Err(Error::invalid(format!(
            "prompt id {cond} outside vocabulary of {}",
            spec.vocab
        )));
    }
    Ok(())
}

fn reshape_spatial(g: &mut Graph, h: Var, height: usize, width: usize) -> Result<Var> {
    let s = g.value(h).shape().to_vec();
    g.reshape(h, [height, width, s[1], s[2]])
}

fn flatten_spatial(g: &mut Graph, h: Var) -> Result<Var> {
    let s = g.value(h).shape().to_vec();
    g.reshape(h, [s[0] * s[1], s[2], s[3]])
}

/// Forward pass recorded on `g`. `x` is `[1, C_img, N, H, W]`.
pub fn forward_graph(
    g: &mut Graph,
    spec: &DenoiserSpec,
    w: &ParamVars,
    x: Var,
    t: usize,
    cond: usize,
    emb: Option<&EmbeddingVars>,
) -> Result<Var> {
    check_input(spec, g.value(x).shape(), cond)?;
    if let Some(e) = emb {
        let l = spec.temporal_modules().len();
        if e.qk.len() != l || e.v.len() != l {
            return Err(Error::invalid(format!("expected {l} embedding pairs")));
        }
    }
    let levels = spec.levels();

    let sin = g.constant(timestep_embedding(t, spec.time_dim));
    let mut onehot = Tensor::zeros([1, spec.vocab]);
    onehot.data_mut()[cond] = 1.0;
    let onehot = g.constant(onehot);
    let te = g.matmul(sin, w.time_proj)?;
    let ce = g.matmul(onehot, w.cond_table)?;
    let e = g.add(te, ce)?;
    let e = g.silu(e);

    let mut module = 0usize;
    let mut block = |g: &mut Graph,
                     mut h: Var,
                     lw: &LevelWeights<Var>,
                     level: usize,
                     skip: Option<Var>|
     -> Result<Var> {
        h = g.matmul(h, lw.proj)?;
        if let Some(s) = skip {
            h = g.add(h, s)?;
        }
        let temb = g.matmul(e, lw.time)?;
        h = g.add(h, temb)?;
        let a = g.matmul(h, lw.mlp_in)?;
        let (lh, lw_) = spec.level_size(level);
        let a = reshape_spatial(g, a, lh, lw_)?;
        let a = g.depthwise_conv3x3(a, lw.spatial)?;
        let a = flatten_spatial(g, a)?;
        let a = g.silu(a);
        let a = g.matmul(a, lw.mlp_out)?;
        h = g.add(h, a)?;
        for [wq, wk, wv] in &lw.attn {
            let key_dim = g.value(*wq).shape()[0];
            let av = AttentionVars {
                wq: *wq,
                wk: *wk,
                wv: *wv,
                key_dim,
            };
            let (m_qk, m_v) = match emb {
                Some(e) if e.active(module) => (Some(e.qk[module]), Some(e.v[module])),
                _ => (None, None),
            };
            let ta = temporal_attention_graph(g, h, &av, m_qk, m_v)?;
            h = g.add(h, ta)?;
            module += 1;
        }
        Ok(h)
    };

    let mut h = to_frame_major_graph(g, x)?;
    let mut skips = Vec::with_capacity(levels);
    for l in 0..levels {
        if l > 0 {
            let (ph, pw) = spec.level_size(l - 1);
            let sp = reshape_spatial(g, h, ph, pw)?;
            let pooled = g.avg_pool2x2(sp)?;
            h = flatten_spatial(g, pooled)?;
        }
        h = block(g, h, &w.down[l], l, None)?;
        skips.push(h);
    }
    for (i, l) in (0..levels).rev().enumerate() {
        let mut skip = None;
        if l < levels - 1 {
            let (ch, cw) = spec.level_size(l + 1);
            let sp = reshape_spatial(g, h, ch, cw)?;
            let up = g.upsample2x(sp)?;
            h = flatten_spatial(g, up)?;
            skip = Some(skips[l]);
        }
        h = block(g, h, &w.up[i], l, skip)?;
    }
    let h = g.silu(h);
    let out = g.matmul(h, w.out)?;
    from_frame_major_graph(g, out, spec.height, spec.width)
}

/// Predicted noise for `x_t`; `m` is injected into every temporal module.
pub fn forward(
    params: &DenoiserParams,
    x_t: &Tensor,
    t: usize,
    cond: usize,
    m: Option<&MotionEmbeddingSet>,
) -> Result<Tensor> {
    let spec = params.spec();
    check_input(spec, x_t.shape(), cond)?;
    if let Some(m) = m {
        m.validate_for(spec)?;
    }
    let mut g = Graph::new();
    let w = ParamVars::constants(&mut g, params);
    let x = g.constant(x_t.clone());
    let emb = m.map(|m| EmbeddingVars::constants(&mut g, m));
    let out = forward_graph(&mut g, spec, &w, x, t, cond, emb.as_ref())?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference, max_relative_error};
    use crate::embeddings::EmbeddingShapeConfig;

    fn small_spec() -> DenoiserSpec {
        DenoiserSpec {
            base_channels: 4,
            height: 4,
            width: 4,
            frames: 3,
            time_dim: 8,
            ..DenoiserSpec::default()
        }
    }

    #[test]
    fn default_spec_has_four_modules() {
        let spec = DenoiserSpec::default();
        spec.validate().unwrap();
        let mods = spec.temporal_modules();
        let got: Vec<_> = mods
            .iter()
            .map(|m| (m.channels, m.height, m.width))
            .collect();
        assert_eq!(
            got,
            vec![(32, 16, 16), (64, 8, 8), (64, 8, 8), (32, 16, 16)]
        );
    }

    #[test]
    fn spec_validation() {
        let bad = DenoiserSpec {
            height: 15,
            ..DenoiserSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = DenoiserSpec {
            channel_mults: vec![],
            ..DenoiserSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn output_shape_matches_input() {
        let spec = DenoiserSpec::default();
        let p = DenoiserParams::init(&spec, 0).unwrap();
        let mut rng = Rng::seed_from(1);
        let x = Tensor::randn(spec.video_shape(), &mut rng);
        let y = forward(&p, &x, 10, 0, None).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.is_finite());
    }

    #[test]
    fn zero_embeddings_match_absent() {
        let spec = small_spec();
        let p = DenoiserParams::init(&spec, 3).unwrap();
        let mut rng = Rng::seed_from(2);
        let x = Tensor::randn(spec.video_shape(), &mut rng);
        let m = MotionEmbeddingSet::init_zero(&spec, EmbeddingShapeConfig::default(), 3).unwrap();
        let a = forward(&p, &x, 7, 1, None).unwrap();
        let b = forward(&p, &x, 7, 1, Some(&m)).unwrap();
        assert!(a.bit_eq(&b));
        // And forward is deterministic.
        assert!(a.bit_eq(&forward(&p, &x, 7, 1, None).unwrap()));
    }

    #[test]
    fn mismatched_embeddings_rejected() {
        let p = DenoiserParams::init(&small_spec(), 3).unwrap();
        let other = DenoiserSpec::default();
        let m = MotionEmbeddingSet::init_zero(&other, EmbeddingShapeConfig::default(), 8).unwrap();
        let x = Tensor::zeros(small_spec().video_shape());
        assert!(forward(&p, &x, 1, 0, Some(&m)).is_err());
        assert!(forward(&p, &x, 1, 9, None).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let spec = small_spec();
        let a = DenoiserParams::init(&spec, 1).unwrap();
        let b = DenoiserParams::init(&spec, 1).unwrap();
        let c = DenoiserParams::init(&spec, 2).unwrap();
        assert!(a.bit_eq(&b));
        assert!(!a.bit_eq(&c));
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn activation_scale_on_unit_normal_input() {
        let spec = DenoiserSpec::default();
        for seed in 0..3 {
            let p = DenoiserParams::init(&spec, seed).unwrap();
            let mut rng = Rng::seed_from(100 + seed);
            let x = Tensor::randn(spec.video_shape(), &mut rng);
            let y = forward(&p, &x, 100, 0, None).unwrap();
            let std = (y.sq_norm() / y.len() as Real - y.mean().powi(2)).sqrt();
            assert!((0.1..=10.0).contains(&std), "seed {seed}: std {std}");
        }
    }

    #[test]
    fn mden_roundtrip_and_corruption() {
        let p = DenoiserParams::init(&small_spec(), 5).unwrap().frozen();
        let bytes = p.to_bytes();
        let back = DenoiserParams::from_bytes(&bytes).unwrap();
        assert!(back.bit_eq(&p));
        assert!(back.is_frozen());
        let header = bytes.len() - p.param_count() * 8;
        for pos in 0..header {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x40;
            assert!(DenoiserParams::from_bytes(&bad).is_err(), "byte {pos}");
        }
        assert!(DenoiserParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn frozen_params_reject_update() {
        let mut p = DenoiserParams::init(&small_spec(), 5).unwrap();
        p.update(|_, t| t.scale(2.0)).unwrap();
        p.freeze();
        assert!(p.update(|_, t| t.clone()).is_err());
    }

    #[test]
    fn embedding_gradients_through_network() {
        let spec = DenoiserSpec {
            frames: 2,
            ..small_spec()
        };
        let p = DenoiserParams::init(&spec, 9).unwrap();
        let mut rng = Rng::seed_from(4);
        let x = Tensor::randn(spec.video_shape(), &mut rng);
        let mut m =
            MotionEmbeddingSet::init_zero(&spec, EmbeddingShapeConfig::default(), 2).unwrap();
        for t in m.tensors_mut() {
            *t = Tensor::randn(t.shape().to_vec(), &mut rng).scale(0.3);
        }
        let loss_of = |m: &MotionEmbeddingSet| -> Real {
            let y = forward(&p, &x, 20, 0, Some(m)).unwrap();
            y.sq_norm() / y.len() as Real
        };
        let mut g = Graph::new();
        let w = ParamVars::constants(&mut g, &p);
        let xv = g.constant(x.clone());
        let ev = EmbeddingVars::trainable(&mut g, &m);
        let y = forward_graph(&mut g, &spec, &w, xv, 20, 0, Some(&ev)).unwrap();
        let sq = g.mul(y, y).unwrap();
        let loss = g.mean(sq);
        let grads = g.grad(loss, &ev.all()).unwrap();
        for (k, analytic) in grads.iter().enumerate() {
            let numeric = finite_difference(m.tensors().nth(k).unwrap(), 1e-5, |probe| {
                let mut mm = m.clone();
                *mm.tensors_mut().nth(k).unwrap() = probe.clone();
                loss_of(&mm)
            });
            let err = max_relative_error(analytic, &numeric, 1e-6);
            assert!(err < 1e-4, "tensor {k}: {err}");
        }
    }

    #[test]
    fn module_mask_disables_injection() {
        let spec = small_spec();
        let p = DenoiserParams::init(&spec, 9).unwrap();
        let mut rng = Rng::seed_from(5);
        let x = Tensor::randn(spec.video_shape(), &mut rng);
        let mut m =
            MotionEmbeddingSet::init_zero(&spec, EmbeddingShapeConfig::default(), 3).unwrap();
        for t in m.tensors_mut() {
            *t = Tensor::randn(t.shape().to_vec(), &mut rng);
        }
        let run = |mask: Option<Vec<bool>>| {
            let mut g = Graph::new();
            let w = ParamVars::constants(&mut g, &p);
            let xv = g.constant(x.clone());
            let mut ev = EmbeddingVars::constants(&mut g, &m);
            if let Some(mask) = mask {
                ev = ev.with_mask(mask);
            }
            let y = forward_graph(&mut g, &spec, &w, xv, 3, 0, Some(&ev)).unwrap();
            g.value(y).clone()
        };
        let none = forward(&p, &x, 3, 0, None).unwrap();
        assert!(run(Some(vec![false; 4])).bit_eq(&none));
        assert!(!run(None).bit_eq(&none));
    }
}
